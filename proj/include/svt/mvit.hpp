#pragma once

#include <array>
#include <optional>
#include <vector>

#include "svt/params.hpp"
#include "svt/spm.hpp"

namespace svt {

struct MViTStage {
    int64_t blocks = 2;
    int64_t channels = 32;
    int64_t heads = 2;
    std::array<int64_t, 3> q_stride{1, 1, 1};   // applied at the stage's first block
    std::array<int64_t, 3> kv_stride{1, 1, 1};  // every block of the stage
};

struct MViTConfig {
    std::array<int64_t, 4> input{8, 32, 32, 1};
    GridDims stem_kernel{3, 7, 7};
    GridDims stem_stride{2, 4, 4};  // overlapping patchify: kernel > stride
    std::vector<MViTStage> stages;
    double mlp_ratio = 4.0;
    GridDims attn_kernel{3, 3, 3};  // q/k/v pooling conv kernel
    int64_t semantic_period = 0;    // every Nth block runs semantic attention; 0 = never
    SPMConfig spm;                  // shared by all semantic blocks
    int64_t num_classes = 8;

    void validate() const;
};

struct MViTBlockPlan {
    int64_t index = 0;  // 1-based, global
    int64_t stage = 0;
    int64_t c_in = 0, c_out = 0, heads = 1;
    GridDims grid_in, grid_q, grid_kv;
    std::array<int64_t, 3> q_stride{1, 1, 1};
    std::array<int64_t, 3> kv_stride{1, 1, 1};
    bool stage_transition = false;
    bool semantic = false;
};

struct MViTPlan {
    GridDims stem_grid;
    std::vector<MViTBlockPlan> blocks;
};

/// Builds the per-block shape plan; semantic blocks land on multiples of
/// semantic_period, shifted one block later when that index is a stage
/// transition (resolution changes must keep conv pooling).
MViTPlan mvit_plan(const MViTConfig& cfg);

struct MViTBlockParams {
    Tensor ln1_g, ln1_b;
    Tensor wq, bq, wk, bk, wv, bv;
    Tensor convq, convk, convv;  // depthwise, [C_out, kt,kh,kw, 1]
    Tensor rel_t, rel_h, rel_w;  // [heads, 2*extent-1]
    Tensor wo, bo;
    Tensor res_w, res_b;  // only when c_in != c_out
    Tensor ln2_g, ln2_b;
    Tensor w1, b1, w2, b2;
    // semantic blocks only
    SemanticPrototypes protos;
    Tensor wk_sem, bk_sem, wv_sem, bv_sem;
    Tensor convk_sem, convv_sem;  // depthwise over M*C window-grid channels
};

/// Decomposed relative position bias: for every (query, key) pair the
/// per-axis tables are looked up at the coordinate offset and summed.
/// Coordinates live on the block's fine input grid. Returns [heads, Nq, Nk].
Tensor relpos_bias(const Tensor& rel_t, const Tensor& rel_h, const Tensor& rel_w,
                   const std::vector<std::array<int64_t, 3>>& q_coords,
                   const std::vector<std::array<int64_t, 3>>& k_coords);

/// Centers of strided positions on the fine grid: i*stride + (stride-1)/2.
std::vector<std::array<int64_t, 3>> pooled_coords(const GridDims& fine, std::array<int64_t, 3> stride);

struct SemanticBlockTrace {
    SupertokenSet set;
    std::vector<double> attn_received;  // over the N_win*M semantic keys
};

/// Pooling attention block (linear + depthwise conv on q/k/v, relative
/// position bias, residual pooling connection).
TokenGrid conv_attn_pool_block(const TokenGrid& x, const MViTBlockPlan& plan, const MViTBlockParams& p,
                               const GridDims& attn_kernel, std::vector<double>* attn_recv = nullptr);

/// Semantic attention: K/V come from the SPM supertokens laid out on the
/// window grid, queries keep full resolution. Output grid == input grid.
TokenGrid semantic_attention_block(const TokenGrid& x, const MViTBlockPlan& plan, const MViTBlockParams& p,
                                   const SPMConfig& spm_cfg, SemanticBlockTrace* trace = nullptr);

struct MViTTrace {
    std::vector<Tensor> layer_tokens;
    std::vector<std::optional<GridDims>> layer_grids;
    std::vector<std::optional<SemanticBlockTrace>> semantic;  // one slot per block
    Tensor logits;
};

class MViTModel : public IModel {
public:
    MViTModel(MViTConfig cfg, uint64_t seed);

    Tensor forward(const Tensor& video) override;
    MViTTrace forward_trace(const Tensor& video);

    ParamStore& params() override { return params_; }
    int64_t num_classes() const override { return cfg_.num_classes; }
    const MViTConfig& config() const { return cfg_; }
    const MViTPlan& plan() const { return plan_; }

private:
    Tensor run(const Tensor& video, MViTTrace* trace);

    MViTConfig cfg_;
    MViTPlan plan_;
    ParamStore params_;
    std::vector<MViTBlockParams> blocks_;
};

}  // namespace svt
