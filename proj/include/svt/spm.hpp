#pragma once

#include <memory>
#include <optional>
#include <utility>

#include "svt/ops.hpp"

namespace svt {

struct GridDims {
    int64_t t = 1, h = 1, w = 1;
    int64_t count() const { return t * h * w; }
    bool operator==(const GridDims&) const = default;
};

/// Token sequence with its spatio-temporal factorization. The grid is
/// dropped once pooling destroys the regular (T,H,W) layout.
struct TokenGrid {
    Tensor tokens;  // [N, C]
    std::optional<GridDims> grid;

    int64_t count() const { return tokens.dim(0); }
    int64_t width() const { return tokens.dim(1); }
};

enum class SpmVariant { Elitism, Neighbor };

struct SPMConfig {
    int64_t prototypes = 8;  // M (per head)
    double theta = 0.7;
    std::optional<GridDims> window;  // nullopt = GLOBAL
    int64_t keep_top = 0;            // N_k original tokens carried along
    SpmVariant variant = SpmVariant::Elitism;
    int64_t groups_k = 1;  // K contiguous rank groups (Neighbor)
    int64_t heads = 1;
    bool output_projection = false;
    bool ensure_coverage = false;  // per-token rescue, used by semantic attention

    void validate(int64_t n_tokens, const std::optional<GridDims>& grid, int64_t channels) const;

    /// Window actually used: the configured one, or the whole extent.
    GridDims effective_window(const std::optional<GridDims>& grid, int64_t n_tokens) const;
    int64_t n_windows(const std::optional<GridDims>& grid, int64_t n_tokens) const;

    /// N_r: pooled rows plus kept originals.
    int64_t output_rows(const std::optional<GridDims>& grid, int64_t n_tokens) const;
    int64_t pooled_rows(const std::optional<GridDims>& grid, int64_t n_tokens) const;
};

/// M trainable embeddings per head, [heads, M, C/heads].
struct SemanticPrototypes {
    Tensor e;
    int64_t heads() const { return e.dim(0); }
    int64_t count() const { return e.dim(1); }
    int64_t width() const { return e.dim(2); }
};

/// Raw prototype/token affinities and their sigmoid compression, both
/// [heads, M, N] in original token order.
struct ScoreMap {
    Tensor raw;
    Tensor compressed;
};

/// Elitism survivorship. mask is [heads, M, N] in original token order;
/// fallback marks (head, prototype, window) slices that had no active
/// token and were fully re-activated. rescued marks tokens activated by
/// the optional coverage pass.
struct ActiveMask {
    BoolArray mask;
    BoolArray fallback;  // [heads, M, N_win]
    BoolArray rescued;   // [heads, M, N]
};

/// Bijective window reindexing. perm[w * window_size + j] is the
/// original index of slot j of window w; inverse undoes it.
struct WindowLayout {
    GridDims window;
    GridDims counts;  // windows per axis
    int64_t n_windows = 1;
    int64_t window_size = 0;
    std::shared_ptr<std::vector<int64_t>> perm;
    std::shared_ptr<std::vector<int64_t>> inverse;
};

WindowLayout window_partition(const std::optional<GridDims>& grid, int64_t n_tokens,
                              const std::optional<GridDims>& window);

ScoreMap compute_scores(const Tensor& tokens, const SemanticPrototypes& protos);

ActiveMask elitism_filter(const ScoreMap& scores, const SPMConfig& cfg, const WindowLayout& wl);

/// Activates every token that survived under no prototype in the
/// prototype where its compressed score is highest (within its window).
/// This guarantees every token contributes to at least one pool.
void apply_coverage_rescue(ActiveMask& mask, const ScoreMap& scores);

/// Rank tokens by mean compressed score over heads and prototypes,
/// return the k best in original relative order (ties to lower index).
std::pair<Tensor, std::vector<int64_t>> keep_top_k(const Tensor& tokens, const ScoreMap& scores, int64_t k);

/// Pooled rows in window-major, prototype-minor order: row w*M + i.
/// For every (head, prototype, window), softmax over the active scores
/// along the window axis then the weighted token sum. The accumulation
/// order is by descending score, so the result does not depend on the
/// order of tokens inside a window.
Tensor pool_supertokens(const Tensor& tokens, const ScoreMap& scores, const ActiveMask& mask,
                        const SPMConfig& cfg, const WindowLayout& wl, std::vector<double>* weights_out);

struct SupertokenSet {
    Tensor output;  // [N_r, C]: kept originals (original order) ++ pooled
    Tensor pooled;  // [M*N_win(*K), C] window-major, prototype, (group)
    Tensor kept;    // [N_k, C]
    std::vector<int64_t> kept_indices;
    ScoreMap scores;
    ActiveMask mask;  // meaningful for the elitism variant
    WindowLayout layout;
    int64_t heads = 1;
    int64_t prototypes = 0;
    /// Dense pooling weight per (head, prototype, token), original token
    /// order; 0 for tokens muted under that prototype.
    std::vector<double> pool_weights;
};

SupertokenSet spm_forward(const TokenGrid& x, const SemanticPrototypes& protos, const SPMConfig& cfg,
                          const Tensor* proj_w = nullptr, const Tensor* proj_b = nullptr);

/// The neighbor-grouping ablation variant (cfg.variant must say so).
SupertokenSet neighbor_grouping_forward(const TokenGrid& x, const SemanticPrototypes& protos,
                                        const SPMConfig& cfg, const Tensor* proj_w = nullptr,
                                        const Tensor* proj_b = nullptr);

}  // namespace svt
