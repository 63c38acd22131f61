#pragma once

#include <array>
#include <optional>
#include <vector>

#include "svt/params.hpp"
#include "svt/spm.hpp"

namespace svt {

enum class ReduceKind { Spm, AvgPool, MaxPool };

/// One token-reduction site: applied to the residual stream right after
/// block `layer` (1-based).
struct SpmScheduleEntry {
    int64_t layer = 0;
    ReduceKind kind = ReduceKind::Spm;
    SPMConfig spm;          // ReduceKind::Spm
    GridDims pool_window;   // ReduceKind::{Avg,Max}Pool
};

struct ViTConfig {
    int64_t depth = 8;
    int64_t embed_dim = 64;
    int64_t heads = 4;
    double mlp_ratio = 4.0;
    GridDims patch{2, 4, 4};
    std::array<int64_t, 4> input{8, 32, 32, 1};  // frames, height, width, channels
    std::vector<SpmScheduleEntry> schedule;
    int64_t num_classes = 8;

    GridDims token_grid() const {
        return GridDims{input[0] / patch.t, input[1] / patch.h, input[2] / patch.w};
    }
    int64_t tokens() const { return token_grid().count(); }
    int64_t mlp_hidden() const { return static_cast<int64_t>(embed_dim * mlp_ratio + 0.5); }

    /// Full build-time validation, including schedule/grid consistency.
    void validate() const;
};

/// Token-count ledger: counts[i] is the sequence length entering block
/// i+1 (counts[0] enters block 1); spm_rows holds N_r per schedule entry.
struct TokenPlan {
    std::vector<int64_t> counts;           // size depth + 1
    std::vector<std::optional<GridDims>> grids;
    std::vector<int64_t> spm_rows;
};

TokenPlan vit_token_plan(const ViTConfig& cfg);

struct ViTBlockParams {
    Tensor ln1_g, ln1_b;
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln2_g, ln2_b;
    Tensor w1, b1, w2, b2;
};

/// Pre-norm residual attention plus pre-norm residual MLP. When
/// attn_recv is given, the mean attention received by every key
/// (averaged over heads and queries) is written to it.
Tensor mhsa_block(const Tensor& x, const ViTBlockParams& p, int64_t heads,
                  std::vector<double>* attn_recv = nullptr);

/// Non-overlapping 3-D patches -> linear projection -> + positional
/// embedding. video is [F,H,W,ch].
Tensor patch_embed(const Tensor& video, const GridDims& patch, int64_t in_channels, const Tensor& w,
                   const Tensor& b, const Tensor& pos);

TokenGrid reduce_avgpool(const TokenGrid& x, const GridDims& window);
TokenGrid reduce_maxpool(const TokenGrid& x, const GridDims& window);

struct SpmLayerTrace {
    int64_t layer = 0;
    SupertokenSet set;
    int64_t tokens_before = 0;
    std::optional<GridDims> grid_before;
};

struct ForwardTrace {
    std::vector<Tensor> layer_tokens;                   // after block i (and its reducer)
    std::vector<std::optional<GridDims>> layer_grids;
    std::vector<std::vector<double>> attn_received;     // per block, on its input tokens
    std::vector<SpmLayerTrace> spm;
    Tensor logits;
};

class ViTModel : public IModel {
public:
    ViTModel(ViTConfig cfg, uint64_t seed);

    Tensor forward(const Tensor& video) override;
    ForwardTrace forward_trace(const Tensor& video);

    ParamStore& params() override { return params_; }
    int64_t num_classes() const override { return cfg_.num_classes; }
    const ViTConfig& config() const { return cfg_; }

private:
    Tensor run(const Tensor& video, ForwardTrace* trace);

    ViTConfig cfg_;
    ParamStore params_;
    std::vector<ViTBlockParams> blocks_;
    std::vector<SemanticPrototypes> spm_protos_;  // one per schedule entry of kind Spm
};

}  // namespace svt
