#pragma once

#include <optional>
#include <vector>

#include "svt/mvit.hpp"
#include "svt/spm.hpp"
#include "svt/vit.hpp"

// Serial reference implementations: straight nested loops, no tape, no
// OpenMP, independent of the vectorized kernels they are used to check.
// The unit/acceptance suites compare against these, and the benchmark
// target measures the parallel kernels against them.
namespace svt::ref {

using Vec = std::vector<double>;

Vec matmul(const Vec& a, const Vec& b, int64_t p, int64_t q, int64_t r);

/// Softmax over the unmasked entries of a single slice; masked outputs 0.
Vec masked_softmax_slice(const Vec& x, const std::vector<uint8_t>& mask);

Vec linear(const Vec& x, int64_t rows, int64_t in, int64_t out, const double* w, const double* b);
Vec layernorm(const Vec& x, int64_t rows, int64_t c, const double* g, const double* b, double eps = 1e-6);
double gelu1(double x);
double sigmoid1(double x);

Vec conv3d(const Vec& x, int64_t t, int64_t h, int64_t w, int64_t c, const double* weight, const double* bias,
           int64_t c_out, int64_t kt, int64_t kh, int64_t kw, std::array<int64_t, 3> stride, int64_t groups);

struct SpmRef {
    Vec output;          // [rows, c]
    int64_t rows = 0;
    int64_t pooled_rows = 0;
    std::vector<int64_t> kept;
};

SpmRef spm_elitism(const Vec& x, int64_t n, int64_t c, const Vec& protos, int64_t heads, int64_t m, double theta,
                   const std::optional<GridDims>& grid, const std::optional<GridDims>& window, int64_t keep_top,
                   bool ensure_coverage);

SpmRef spm_neighbor(const Vec& x, int64_t n, int64_t c, const Vec& protos, int64_t heads, int64_t m,
                    const std::optional<GridDims>& grid, const std::optional<GridDims>& window, int64_t k_groups,
                    int64_t keep_top);

Vec avgpool_windows(const Vec& x, const GridDims& grid, int64_t c, const GridDims& window);
Vec maxpool_windows(const Vec& x, const GridDims& grid, int64_t c, const GridDims& window);

Vec mhsa_block(const Vec& x, int64_t n, int64_t c, int64_t heads, const ViTBlockParams& p);

Vec conv_attn_pool_block(const Vec& x, const MViTBlockPlan& plan, const MViTBlockParams& p,
                         const GridDims& attn_kernel);

Vec semantic_attention_block(const Vec& x, const MViTBlockPlan& plan, const MViTBlockParams& p,
                             const SPMConfig& spm_cfg);

}  // namespace svt::ref
