#pragma once

#include <array>
#include <memory>
#include <optional>
#include <vector>

#include "svt/tape.hpp"
#include "svt/tensor.hpp"

namespace svt {

// ---------------------------------------------------------------------------
// Core differentiable ops. All ops are pure: they allocate their output
// and, when a tape is active and an input requires grad, record one
// adjoint closure. Gradients accumulate with += so a parameter used in
// several places (or across samples) sums its contributions.
// ---------------------------------------------------------------------------

/// Batched matrix product a[...,P,Q] x b[...,Q,R] -> [...,P,R].
/// Leading batch dims broadcast (missing or size-1 dims repeat).
Tensor matmul(const Tensor& a, const Tensor& b);

/// Softmax along `axis` restricted to unmasked entries; masked entries
/// are exactly 0 in the output. A fully masked slice is a contract
/// violation (callers must guarantee at least one unmasked element).
Tensor masked_softmax(const Tensor& x, const BoolArray& mask, int axis);

/// Plain softmax along `axis`.
Tensor softmax(const Tensor& x, int axis);

/// Layer normalization over the last axis with affine parameters.
Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-6);

Tensor sigmoid(const Tensor& x);
Tensor gelu(const Tensor& x);  // exact erf form

/// x[..., in] * w[in, out] + b[out]; x is treated as rows of width in.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
/// Same without bias.
Tensor linear(const Tensor& x, const Tensor& w);

Tensor add(const Tensor& a, const Tensor& b);  // strict same-shape
Tensor scale(const Tensor& x, double s);
Tensor mean(const Tensor& x, int axis);        // drops the reduced axis
Tensor max_reduce(const Tensor& x, int axis);  // ties -> lower index

/// Indices of the k largest values along `axis`, ties broken toward the
/// lower index. Not differentiable.
IndexArray topk_indices(const Tensor& x, int64_t k, int axis);

Tensor reshape(const Tensor& x, Shape shape);
Tensor transpose(const Tensor& x, const std::vector<int>& perm);

/// out.flat[i] = x.flat[map[i]]. The map is shared so the tape does not
/// copy it. Backward scatter-adds (duplicate sources are allowed).
Tensor reindex(const Tensor& x, std::shared_ptr<const std::vector<int64_t>> map, Shape out_shape);

/// Row selection on a [N, C] tensor.
Tensor gather_rows(const Tensor& x, const std::vector<int64_t>& rows);

/// Stack along axis 0; trailing dims must agree.
Tensor concat_rows(const std::vector<Tensor>& parts);

/// Grouped 3-D convolution on a [T,H,W,C] tensor with SAME padding.
/// weight: [C_out, k_t, k_h, k_w, C/groups]; optional bias [C_out].
/// groups must divide both C and C_out; groups == C == C_out is depthwise.
Tensor grouped_conv3d(const Tensor& x, const Tensor& weight, const Tensor* bias,
                      std::array<int64_t, 3> stride, int64_t groups);

/// Mean softmax cross-entropy over rows of logits [B, K] given integer
/// labels. Returns a scalar.
Tensor cross_entropy_logits(const Tensor& logits, const std::vector<int64_t>& labels);

/// Output spatial extent of SAME-padded convolution.
inline int64_t conv_out_extent(int64_t in, int64_t stride) { return (in + stride - 1) / stride; }

/// Exact MAC count of grouped_conv3d with SAME padding (border taps that
/// fall outside the input are skipped, not multiplied).
uint64_t conv3d_mac_count(std::array<int64_t, 3> in_dims, std::array<int64_t, 3> kernel,
                          std::array<int64_t, 3> stride, int64_t c_in, int64_t c_out, int64_t groups);

}  // namespace svt
