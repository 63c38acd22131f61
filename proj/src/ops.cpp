#include "svt/ops.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>

#include "svt/macs.hpp"

namespace svt {
namespace {

// Work threshold below which parallel regions are not worth spawning.
constexpr int64_t kParCutoff = 1 << 14;

bool want_grad(std::initializer_list<const Tensor*> ins) {
    if (!Tape::current()) return false;
    for (const Tensor* t : ins)
        if (t && t->defined() && t->requires_grad()) return true;
    return false;
}

void check_finite(const Tensor& t, const char* op) {
    if (!debug_check_finite()) return;
    for (double v : t.data())
        if (!std::isfinite(v)) throw NumericError(std::string(op) + " produced a non-finite value");
}

void split_axis(const Shape& s, int axis, int64_t& outer, int64_t& len, int64_t& inner) {
    if (axis < 0 || axis >= static_cast<int>(s.size()))
        throw ArgumentError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
    outer = 1;
    inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s[i];
    len = s[axis];
    for (size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
}

// Batch bookkeeping for broadcast matmul. Strides are in units of whole
// matrices; a stride of 0 marks a broadcast dimension.
struct BatchMap {
    Shape batch;
    int64_t count = 1;
    std::vector<int64_t> a_stride, b_stride;
    bool a_bcast = false, b_bcast = false;

    int64_t map(int64_t flat, const std::vector<int64_t>& stride) const {
        int64_t idx = 0;
        for (int i = static_cast<int>(batch.size()) - 1; i >= 0; --i) {
            int64_t coord = flat % batch[i];
            flat /= batch[i];
            idx += coord * stride[i];
        }
        return idx;
    }
};

BatchMap make_batch_map(const Shape& ashape, const Shape& bshape) {
    int an = static_cast<int>(ashape.size()) - 2;
    int bn = static_cast<int>(bshape.size()) - 2;
    int n = std::max(an, bn);
    BatchMap m;
    m.batch.assign(n, 1);
    Shape apad(n, 1), bpad(n, 1);
    for (int i = 0; i < an; ++i) apad[n - an + i] = ashape[i];
    for (int i = 0; i < bn; ++i) bpad[n - bn + i] = bshape[i];
    for (int i = 0; i < n; ++i) {
        if (apad[i] != bpad[i] && apad[i] != 1 && bpad[i] != 1)
            throw ShapeError("matmul: batch dims of " + shape_str(ashape) + " and " + shape_str(bshape) +
                             " do not broadcast");
        m.batch[i] = std::max(apad[i], bpad[i]);
        m.count *= m.batch[i];
    }
    m.a_stride.assign(n, 0);
    m.b_stride.assign(n, 0);
    int64_t sa = 1, sb = 1;
    for (int i = n - 1; i >= 0; --i) {
        m.a_stride[i] = (apad[i] == 1) ? 0 : sa;
        m.b_stride[i] = (bpad[i] == 1) ? 0 : sb;
        sa *= apad[i];
        sb *= bpad[i];
        if (apad[i] == 1 && m.batch[i] > 1) m.a_bcast = true;
        if (bpad[i] == 1 && m.batch[i] > 1) m.b_bcast = true;
    }
    return m;
}

}  // namespace

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() < 2 || b.ndim() < 2)
        throw ShapeError("matmul: operands must have >= 2 dims, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    const int64_t P = a.dim(a.ndim() - 2), Q = a.dim(a.ndim() - 1);
    const int64_t Qb = b.dim(b.ndim() - 2), R = b.dim(b.ndim() - 1);
    if (Q != Qb)
        throw ShapeError("matmul: inner dimensions disagree: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    BatchMap bm = make_batch_map(a.shape(), b.shape());

    Shape out_shape = bm.batch;
    out_shape.push_back(P);
    out_shape.push_back(R);
    Tensor out = Tensor::zeros(std::move(out_shape));

    const double* A = a.data().data();
    const double* B = b.data().data();
    double* C = out.data_mut().data();
    const int64_t mats = bm.count, asz = P * Q, bsz = Q * R, csz = P * R;
    const int64_t work = mats * P * Q * R;
    MacCounter::add(MacKind::Matmul, static_cast<uint64_t>(work));

#pragma omp parallel for schedule(static) if (work > kParCutoff)
    for (int64_t bp = 0; bp < mats * P; ++bp) {
        const int64_t mb = bp / P, p = bp % P;
        const double* Ar = A + bm.map(mb, bm.a_stride) * asz + p * Q;
        const double* Bb = B + bm.map(mb, bm.b_stride) * bsz;
        double* Cr = C + mb * csz + p * R;
        for (int64_t q = 0; q < Q; ++q) {
            const double av = Ar[q];
            const double* Br = Bb + q * R;
            for (int64_t r = 0; r < R; ++r) Cr[r] += av * Br[r];
        }
    }
    check_finite(out, "matmul");

    if (want_grad({&a, &b})) {
        Tensor at = a, bt = b, ot = out;
        ot.set_requires_grad(true);
        const bool ga = a.requires_grad(), gb = b.requires_grad();
        if (ga) at.ensure_grad();
        if (gb) bt.ensure_grad();
        Tape::current()->record("matmul", [at, bt, ot, bm, P, Q, R, mats, asz, bsz, csz, ga, gb]() mutable {
            const double* A = at.data().data();
            const double* B = bt.data().data();
            const double* dC = ot.grad().data();
            if (ga) {
                double* dA = at.grad_mut().data();
                if (!bm.a_bcast) {
#pragma omp parallel for schedule(static) if (mats * P * Q * R > kParCutoff)
                    for (int64_t bp = 0; bp < mats * P; ++bp) {
                        const int64_t mb = bp / P, p = bp % P;
                        const double* Bb = B + bm.map(mb, bm.b_stride) * bsz;
                        const double* dCr = dC + mb * csz + p * R;
                        double* dAr = dA + bm.map(mb, bm.a_stride) * asz + p * Q;
                        for (int64_t q = 0; q < Q; ++q) {
                            const double* Br = Bb + q * R;
                            double acc = 0.0;
                            for (int64_t r = 0; r < R; ++r) acc += dCr[r] * Br[r];
                            dAr[q] += acc;
                        }
                    }
                } else {
                    // Broadcast operand: keep the reduction over batches serial.
                    for (int64_t mb = 0; mb < mats; ++mb) {
                        const double* Bb = B + bm.map(mb, bm.b_stride) * bsz;
                        const double* dCb = dC + mb * csz;
                        double* dAb = dA + bm.map(mb, bm.a_stride) * asz;
#pragma omp parallel for schedule(static) if (P * Q * R > kParCutoff)
                        for (int64_t p = 0; p < P; ++p) {
                            const double* dCr = dCb + p * R;
                            double* dAr = dAb + p * Q;
                            for (int64_t q = 0; q < Q; ++q) {
                                const double* Br = Bb + q * R;
                                double acc = 0.0;
                                for (int64_t r = 0; r < R; ++r) acc += dCr[r] * Br[r];
                                dAr[q] += acc;
                            }
                        }
                    }
                }
            }
            if (gb) {
                double* dB = bt.grad_mut().data();
                if (!bm.b_bcast) {
#pragma omp parallel for schedule(static) if (mats * P * Q * R > kParCutoff)
                    for (int64_t bq = 0; bq < mats * Q; ++bq) {
                        const int64_t mb = bq / Q, q = bq % Q;
                        const double* Ab = A + bm.map(mb, bm.a_stride) * asz;
                        const double* dCb = dC + mb * csz;
                        double* dBr = dB + bm.map(mb, bm.b_stride) * bsz + q * R;
                        for (int64_t p = 0; p < P; ++p) {
                            const double av = Ab[p * Q + q];
                            const double* dCr = dCb + p * R;
                            for (int64_t r = 0; r < R; ++r) dBr[r] += av * dCr[r];
                        }
                    }
                } else {
                    for (int64_t mb = 0; mb < mats; ++mb) {
                        const double* Ab = A + bm.map(mb, bm.a_stride) * asz;
                        const double* dCb = dC + mb * csz;
                        double* dBb = dB + bm.map(mb, bm.b_stride) * bsz;
#pragma omp parallel for schedule(static) if (P * Q * R > kParCutoff)
                        for (int64_t q = 0; q < Q; ++q) {
                            double* dBr = dBb + q * R;
                            for (int64_t p = 0; p < P; ++p) {
                                const double av = Ab[p * Q + q];
                                const double* dCr = dCb + p * R;
                                for (int64_t r = 0; r < R; ++r) dBr[r] += av * dCr[r];
                            }
                        }
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// softmax / masked_softmax
// ---------------------------------------------------------------------------

namespace {

Tensor softmax_impl(const Tensor& x, const uint8_t* mask, int axis, const char* name) {
    int64_t outer, len, inner;
    split_axis(x.shape(), axis, outer, len, inner);
    Tensor out = Tensor::zeros(x.shape());
    const double* X = x.data().data();
    double* Y = out.data_mut().data();
    const int64_t slices = outer * inner;
    std::atomic<bool> empty_slice{false};

#pragma omp parallel for schedule(static) if (slices * len > kParCutoff)
    for (int64_t s = 0; s < slices; ++s) {
        const int64_t o = s / inner, i = s % inner;
        const int64_t base = o * len * inner + i;
        double mx = -std::numeric_limits<double>::infinity();
        bool any = false;
        for (int64_t l = 0; l < len; ++l) {
            const int64_t idx = base + l * inner;
            if (!mask || mask[idx]) {
                any = true;
                if (X[idx] > mx) mx = X[idx];
            }
        }
        if (!any) {
            empty_slice.store(true, std::memory_order_relaxed);
            continue;
        }
        double denom = 0.0;
        for (int64_t l = 0; l < len; ++l) {
            const int64_t idx = base + l * inner;
            if (!mask || mask[idx]) {
                const double e = std::exp(X[idx] - mx);
                Y[idx] = e;
                denom += e;
            }
        }
        for (int64_t l = 0; l < len; ++l) {
            const int64_t idx = base + l * inner;
            if (!mask || mask[idx])
                Y[idx] /= denom;
            else
                Y[idx] = 0.0;
        }
    }
    if (empty_slice.load())
        throw ContractError(std::string(name) + ": fully masked slice along axis " + std::to_string(axis));
    check_finite(out, name);

    if (want_grad({&x})) {
        Tensor xt = x, ot = out;
        ot.set_requires_grad(true);
        xt.ensure_grad();
        // The mask is consulted again in the adjoint; copy it into the closure.
        std::shared_ptr<std::vector<uint8_t>> mcopy;
        if (mask) mcopy = std::make_shared<std::vector<uint8_t>>(mask, mask + x.numel());
        Tape::current()->record(name, [xt, ot, mcopy, outer, len, inner]() mutable {
            const double* Y = ot.data().data();
            const double* dY = ot.grad().data();
            double* dX = xt.grad_mut().data();
            const uint8_t* M = mcopy ? mcopy->data() : nullptr;
            const int64_t slices = outer * inner;
#pragma omp parallel for schedule(static) if (slices * len > kParCutoff)
            for (int64_t s = 0; s < slices; ++s) {
                const int64_t o = s / inner, i = s % inner;
                const int64_t base = o * len * inner + i;
                double dot = 0.0;
                for (int64_t l = 0; l < len; ++l) {
                    const int64_t idx = base + l * inner;
                    if (!M || M[idx]) dot += dY[idx] * Y[idx];
                }
                for (int64_t l = 0; l < len; ++l) {
                    const int64_t idx = base + l * inner;
                    if (!M || M[idx]) dX[idx] += Y[idx] * (dY[idx] - dot);
                }
            }
        });
    }
    return out;
}

}  // namespace

Tensor masked_softmax(const Tensor& x, const BoolArray& mask, int axis) {
    if (mask.shape != x.shape())
        throw ShapeError("masked_softmax: mask shape " + shape_str(mask.shape) + " != input shape " +
                         shape_str(x.shape()));
    return softmax_impl(x, mask.v.data(), axis, "masked_softmax");
}

Tensor softmax(const Tensor& x, int axis) { return softmax_impl(x, nullptr, axis, "softmax"); }

// ---------------------------------------------------------------------------
// layernorm
// ---------------------------------------------------------------------------

Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    const int64_t C = x.dim(x.ndim() - 1);
    if (gamma.numel() != C || beta.numel() != C)
        throw ShapeError("layernorm: affine params must have " + std::to_string(C) + " elements");
    const int64_t rows = x.numel() / C;
    Tensor out = Tensor::zeros(x.shape());
    auto mu = std::make_shared<std::vector<double>>(rows);
    auto istd = std::make_shared<std::vector<double>>(rows);
    const double* X = x.data().data();
    const double* G = gamma.data().data();
    const double* Bv = beta.data().data();
    double* Y = out.data_mut().data();

#pragma omp parallel for schedule(static) if (rows * C > kParCutoff)
    for (int64_t r = 0; r < rows; ++r) {
        const double* xr = X + r * C;
        double m = 0.0;
        for (int64_t c = 0; c < C; ++c) m += xr[c];
        m /= static_cast<double>(C);
        double var = 0.0;
        for (int64_t c = 0; c < C; ++c) {
            const double d = xr[c] - m;
            var += d * d;
        }
        var /= static_cast<double>(C);
        const double is = 1.0 / std::sqrt(var + eps);
        (*mu)[r] = m;
        (*istd)[r] = is;
        double* yr = Y + r * C;
        for (int64_t c = 0; c < C; ++c) yr[c] = G[c] * ((xr[c] - m) * is) + Bv[c];
    }
    check_finite(out, "layernorm");

    if (want_grad({&x, &gamma, &beta})) {
        Tensor xt = x, gt = gamma, bt = beta, ot = out;
        ot.set_requires_grad(true);
        const bool gx = x.requires_grad(), gg = gamma.requires_grad(), gb = beta.requires_grad();
        if (gx) xt.ensure_grad();
        if (gg) gt.ensure_grad();
        if (gb) bt.ensure_grad();
        Tape::current()->record("layernorm", [xt, gt, bt, ot, mu, istd, rows, C, gx, gg, gb]() mutable {
            const double* X = xt.data().data();
            const double* G = gt.data().data();
            const double* dY = ot.grad().data();
            if (gx) {
                double* dX = xt.grad_mut().data();
#pragma omp parallel for schedule(static) if (rows * C > kParCutoff)
                for (int64_t r = 0; r < rows; ++r) {
                    const double m = (*mu)[r], is = (*istd)[r];
                    const double* xr = X + r * C;
                    const double* dyr = dY + r * C;
                    double c1 = 0.0, c2 = 0.0;
                    for (int64_t c = 0; c < C; ++c) {
                        const double xh = (xr[c] - m) * is;
                        const double dxh = dyr[c] * G[c];
                        c1 += dxh;
                        c2 += dxh * xh;
                    }
                    c1 /= static_cast<double>(C);
                    c2 /= static_cast<double>(C);
                    double* dxr = dX + r * C;
                    for (int64_t c = 0; c < C; ++c) {
                        const double xh = (xr[c] - m) * is;
                        const double dxh = dyr[c] * G[c];
                        dxr[c] += is * (dxh - c1 - xh * c2);
                    }
                }
            }
            if (gg || gb) {
                double* dG = gg ? gt.grad_mut().data() : nullptr;
                double* dB = gb ? bt.grad_mut().data() : nullptr;
#pragma omp parallel for schedule(static) if (rows * C > kParCutoff)
                for (int64_t c = 0; c < C; ++c) {
                    double sg = 0.0, sb = 0.0;
                    for (int64_t r = 0; r < rows; ++r) {
                        const double xh = (X[r * C + c] - (*mu)[r]) * (*istd)[r];
                        sg += dY[r * C + c] * xh;
                        sb += dY[r * C + c];
                    }
                    if (dG) dG[c] += sg;
                    if (dB) dB[c] += sb;
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// elementwise ops
// ---------------------------------------------------------------------------

Tensor sigmoid(const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape());
    const double* X = x.data().data();
    double* Y = out.data_mut().data();
    const int64_t n = x.numel();
#pragma omp parallel for schedule(static) if (n > kParCutoff)
    for (int64_t i = 0; i < n; ++i) Y[i] = 1.0 / (1.0 + std::exp(-X[i]));
    check_finite(out, "sigmoid");
    if (want_grad({&x})) {
        Tensor xt = x, ot = out;
        ot.set_requires_grad(true);
        xt.ensure_grad();
        Tape::current()->record("sigmoid", [xt, ot, n]() mutable {
            const double* Y = ot.data().data();
            const double* dY = ot.grad().data();
            double* dX = xt.grad_mut().data();
#pragma omp parallel for schedule(static) if (n > kParCutoff)
            for (int64_t i = 0; i < n; ++i) dX[i] += dY[i] * Y[i] * (1.0 - Y[i]);
        });
    }
    return out;
}

Tensor gelu(const Tensor& x) {
    static const double kInvSqrt2 = 0.7071067811865475244;
    static const double kInvSqrt2Pi = 0.3989422804014326779;
    Tensor out = Tensor::zeros(x.shape());
    const double* X = x.data().data();
    double* Y = out.data_mut().data();
    const int64_t n = x.numel();
#pragma omp parallel for schedule(static) if (n > kParCutoff)
    for (int64_t i = 0; i < n; ++i) Y[i] = 0.5 * X[i] * (1.0 + std::erf(X[i] * kInvSqrt2));
    check_finite(out, "gelu");
    if (want_grad({&x})) {
        Tensor xt = x, ot = out;
        ot.set_requires_grad(true);
        xt.ensure_grad();
        Tape::current()->record("gelu", [xt, ot, n]() mutable {
            const double* X = xt.data().data();
            const double* dY = ot.grad().data();
            double* dX = xt.grad_mut().data();
#pragma omp parallel for schedule(static) if (n > kParCutoff)
            for (int64_t i = 0; i < n; ++i) {
                const double cdf = 0.5 * (1.0 + std::erf(X[i] * kInvSqrt2));
                const double pdf = kInvSqrt2Pi * std::exp(-0.5 * X[i] * X[i]);
                dX[i] += dY[i] * (cdf + X[i] * pdf);
            }
        });
    }
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw ShapeError("add: shapes differ: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor out = Tensor::zeros(a.shape());
    const double* A = a.data().data();
    const double* B = b.data().data();
    double* Y = out.data_mut().data();
    const int64_t n = a.numel();
#pragma omp parallel for schedule(static) if (n > kParCutoff)
    for (int64_t i = 0; i < n; ++i) Y[i] = A[i] + B[i];
    check_finite(out, "add");
    if (want_grad({&a, &b})) {
        Tensor at = a, bt = b, ot = out;
        ot.set_requires_grad(true);
        const bool ga = a.requires_grad(), gb = b.requires_grad();
        if (ga) at.ensure_grad();
        if (gb) bt.ensure_grad();
        Tape::current()->record("add", [at, bt, ot, n, ga, gb]() mutable {
            const double* dY = ot.grad().data();
            if (ga) {
                double* dA = at.grad_mut().data();
#pragma omp parallel for schedule(static) if (n > kParCutoff)
                for (int64_t i = 0; i < n; ++i) dA[i] += dY[i];
            }
            if (gb) {
                double* dB = bt.grad_mut().data();
#pragma omp parallel for schedule(static) if (n > kParCutoff)
                for (int64_t i = 0; i < n; ++i) dB[i] += dY[i];
            }
        });
    }
    return out;
}

Tensor scale(const Tensor& x, double s) {
    Tensor out = Tensor::zeros(x.shape());
    const double* X = x.data().data();
    double* Y = out.data_mut().data();
    const int64_t n = x.numel();
#pragma omp parallel for schedule(static) if (n > kParCutoff)
    for (int64_t i = 0; i < n; ++i) Y[i] = s * X[i];
    check_finite(out, "scale");
    if (want_grad({&x})) {
        Tensor xt = x, ot = out;
        ot.set_requires_grad(true);
        xt.ensure_grad();
        Tape::current()->record("scale", [xt, ot, s, n]() mutable {
            const double* dY = ot.grad().data();
            double* dX = xt.grad_mut().data();
#pragma omp parallel for schedule(static) if (n > kParCutoff)
            for (int64_t i = 0; i < n; ++i) dX[i] += s * dY[i];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

Tensor mean(const Tensor& x, int axis) {
    int64_t outer, len, inner;
    split_axis(x.shape(), axis, outer, len, inner);
    Shape out_shape;
    for (int i = 0; i < x.ndim(); ++i)
        if (i != axis) out_shape.push_back(x.dim(i));
    if (out_shape.empty()) out_shape.push_back(1);
    Tensor out = Tensor::zeros(out_shape);
    const double* X = x.data().data();
    double* Y = out.data_mut().data();
    const int64_t slices = outer * inner;
#pragma omp parallel for schedule(static) if (slices * len > kParCutoff)
    for (int64_t s = 0; s < slices; ++s) {
        const int64_t o = s / inner, i = s % inner;
        const int64_t base = o * len * inner + i;
        double acc = 0.0;
        for (int64_t l = 0; l < len; ++l) acc += X[base + l * inner];
        Y[o * inner + i] = acc / static_cast<double>(len);
    }
    check_finite(out, "mean");
    if (want_grad({&x})) {
        Tensor xt = x, ot = out;
        ot.set_requires_grad(true);
        xt.ensure_grad();
        Tape::current()->record("mean", [xt, ot, outer, len, inner]() mutable {
            const double* dY = ot.grad().data();
            double* dX = xt.grad_mut().data();
            const int64_t slices = outer * inner;
            const double invl = 1.0 / static_cast<double>(len);
#pragma omp parallel for schedule(static) if (slices * len > kParCutoff)
            for (int64_t s = 0; s < slices; ++s) {
                const int64_t o = s / inner, i = s % inner;
                const int64_t base = o * len * inner + i;
                const double g = dY[o * inner + i] * invl;
                for (int64_t l = 0; l < len; ++l) dX[base + l * inner] += g;
            }
        });
    }
    return out;
}

Tensor max_reduce(const Tensor& x, int axis) {
    int64_t outer, len, inner;
    split_axis(x.shape(), axis, outer, len, inner);
    Shape out_shape;
    for (int i = 0; i < x.ndim(); ++i)
        if (i != axis) out_shape.push_back(x.dim(i));
    if (out_shape.empty()) out_shape.push_back(1);
    Tensor out = Tensor::zeros(out_shape);
    auto argmax = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(outer * inner));
    const double* X = x.data().data();
    double* Y = out.data_mut().data();
    const int64_t slices = outer * inner;
#pragma omp parallel for schedule(static) if (slices * len > kParCutoff)
    for (int64_t s = 0; s < slices; ++s) {
        const int64_t o = s / inner, i = s % inner;
        const int64_t base = o * len * inner + i;
        double best = X[base];
        int64_t bi = 0;
        for (int64_t l = 1; l < len; ++l) {
            const double v = X[base + l * inner];
            if (v > best) {  // strict: ties keep the lower index
                best = v;
                bi = l;
            }
        }
        Y[o * inner + i] = best;
        (*argmax)[static_cast<size_t>(s)] = base + bi * inner;
    }
    check_finite(out, "max_reduce");
    if (want_grad({&x})) {
        Tensor xt = x, ot = out;
        ot.set_requires_grad(true);
        xt.ensure_grad();
        Tape::current()->record("max_reduce", [xt, ot, argmax, slices, inner]() mutable {
            const double* dY = ot.grad().data();
            double* dX = xt.grad_mut().data();
#pragma omp parallel for schedule(static) if (slices > kParCutoff)
            for (int64_t s = 0; s < slices; ++s) {
                const int64_t o = s / inner, i = s % inner;
                dX[(*argmax)[static_cast<size_t>(s)]] += dY[o * inner + i];
            }
        });
    }
    return out;
}

IndexArray topk_indices(const Tensor& x, int64_t k, int axis) {
    int64_t outer, len, inner;
    split_axis(x.shape(), axis, outer, len, inner);
    if (k < 0 || k > len)
        throw ArgumentError("topk_indices: k=" + std::to_string(k) + " out of range for axis length " +
                            std::to_string(len));
    IndexArray out;
    out.shape = x.shape();
    out.shape[static_cast<size_t>(axis)] = k;
    out.v.assign(static_cast<size_t>(outer * k * inner), 0);
    const double* X = x.data().data();
    std::vector<int64_t> order(static_cast<size_t>(len));
    for (int64_t o = 0; o < outer; ++o) {
        for (int64_t i = 0; i < inner; ++i) {
            const int64_t base = o * len * inner + i;
            std::iota(order.begin(), order.end(), 0);
            std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](int64_t l, int64_t r) {
                const double vl = X[base + l * inner], vr = X[base + r * inner];
                if (vl != vr) return vl > vr;
                return l < r;  // ties toward the lower index
            });
            for (int64_t j = 0; j < k; ++j) out.v[static_cast<size_t>((o * k + j) * inner + i)] = order[j];
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// layout ops
// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape) {
    if (numel_of(shape) != x.numel())
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    Tensor out = Tensor::from(std::move(shape), std::vector<double>(x.data().begin(), x.data().end()));
    if (want_grad({&x})) {
        Tensor xt = x, ot = out;
        ot.set_requires_grad(true);
        xt.ensure_grad();
        Tape::current()->record("reshape", [xt, ot]() mutable {
            const double* dY = ot.grad().data();
            double* dX = xt.grad_mut().data();
            const int64_t n = ot.numel();
#pragma omp parallel for schedule(static) if (n > kParCutoff)
            for (int64_t i = 0; i < n; ++i) dX[i] += dY[i];
        });
    }
    return out;
}

Tensor transpose(const Tensor& x, const std::vector<int>& perm) {
    const int n = x.ndim();
    if (static_cast<int>(perm.size()) != n) throw ArgumentError("transpose: perm rank mismatch");
    std::vector<bool> seen(static_cast<size_t>(n), false);
    for (int p : perm) {
        if (p < 0 || p >= n || seen[static_cast<size_t>(p)]) throw ArgumentError("transpose: invalid permutation");
        seen[static_cast<size_t>(p)] = true;
    }
    Shape out_shape(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) out_shape[static_cast<size_t>(i)] = x.dim(perm[static_cast<size_t>(i)]);
    const auto xstrides = row_major_strides(x.shape());
    // stride of out-axis i in the input
    std::vector<int64_t> ostride_in(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) ostride_in[static_cast<size_t>(i)] = xstrides[static_cast<size_t>(perm[static_cast<size_t>(i)])];

    Tensor out = Tensor::zeros(out_shape);
    const double* X = x.data().data();
    double* Y = out.data_mut().data();
    const int64_t total = x.numel();
    const auto oshape = out.shape();
#pragma omp parallel for schedule(static) if (total > kParCutoff)
    for (int64_t oi = 0; oi < total; ++oi) {
        int64_t rem = oi, xi = 0;
        for (int d = n - 1; d >= 0; --d) {
            const int64_t coord = rem % oshape[static_cast<size_t>(d)];
            rem /= oshape[static_cast<size_t>(d)];
            xi += coord * ostride_in[static_cast<size_t>(d)];
        }
        Y[oi] = X[xi];
    }
    if (want_grad({&x})) {
        Tensor xt = x, ot = out;
        ot.set_requires_grad(true);
        xt.ensure_grad();
        Shape osh = out.shape();
        Tape::current()->record("transpose", [xt, ot, ostride_in, osh, n, total]() mutable {
            const double* dY = ot.grad().data();
            double* dX = xt.grad_mut().data();
#pragma omp parallel for schedule(static) if (total > kParCutoff)
            for (int64_t oi = 0; oi < total; ++oi) {
                int64_t rem = oi, xi = 0;
                for (int d = n - 1; d >= 0; --d) {
                    const int64_t coord = rem % osh[static_cast<size_t>(d)];
                    rem /= osh[static_cast<size_t>(d)];
                    xi += coord * ostride_in[static_cast<size_t>(d)];
                }
                dX[xi] += dY[oi];
            }
        });
    }
    return out;
}

Tensor reindex(const Tensor& x, std::shared_ptr<const std::vector<int64_t>> map, Shape out_shape) {
    if (static_cast<int64_t>(map->size()) != numel_of(out_shape))
        throw ArgumentError("reindex: map size " + std::to_string(map->size()) + " != numel of " +
                            shape_str(out_shape));
    const int64_t xn = x.numel();
    for (int64_t idx : *map)
        if (idx < 0 || idx >= xn) throw ArgumentError("reindex: map entry " + std::to_string(idx) + " out of range");
    Tensor out = Tensor::zeros(std::move(out_shape));
    const double* X = x.data().data();
    double* Y = out.data_mut().data();
    const int64_t n = out.numel();
    const int64_t* M = map->data();
#pragma omp parallel for schedule(static) if (n > kParCutoff)
    for (int64_t i = 0; i < n; ++i) Y[i] = X[M[i]];
    if (want_grad({&x})) {
        Tensor xt = x, ot = out;
        ot.set_requires_grad(true);
        xt.ensure_grad();
        Tape::current()->record("reindex", [xt, ot, map]() mutable {
            const double* dY = ot.grad().data();
            double* dX = xt.grad_mut().data();
            const int64_t n = ot.numel();
            const int64_t* M = map->data();
            // Serial: map entries may repeat.
            for (int64_t i = 0; i < n; ++i) dX[M[i]] += dY[i];
        });
    }
    return out;
}

Tensor gather_rows(const Tensor& x, const std::vector<int64_t>& rows) {
    if (x.ndim() < 1) throw ShapeError("gather_rows: input must have rows");
    const int64_t n_rows = x.dim(0);
    const int64_t width = x.numel() / std::max<int64_t>(n_rows, 1);
    for (int64_t r : rows)
        if (r < 0 || r >= n_rows) throw ArgumentError("gather_rows: row " + std::to_string(r) + " out of range");
    Shape out_shape = x.shape();
    out_shape[0] = static_cast<int64_t>(rows.size());
    Tensor out = Tensor::zeros(std::move(out_shape));
    const double* X = x.data().data();
    double* Y = out.data_mut().data();
    for (size_t i = 0; i < rows.size(); ++i)
        std::memcpy(Y + static_cast<int64_t>(i) * width, X + rows[i] * width, sizeof(double) * static_cast<size_t>(width));
    if (want_grad({&x})) {
        Tensor xt = x, ot = out;
        ot.set_requires_grad(true);
        xt.ensure_grad();
        auto rcopy = std::make_shared<std::vector<int64_t>>(rows);
        Tape::current()->record("gather_rows", [xt, ot, rcopy, width]() mutable {
            const double* dY = ot.grad().data();
            double* dX = xt.grad_mut().data();
            for (size_t i = 0; i < rcopy->size(); ++i) {
                const double* src = dY + static_cast<int64_t>(i) * width;
                double* dst = dX + (*rcopy)[i] * width;
                for (int64_t c = 0; c < width; ++c) dst[c] += src[c];
            }
        });
    }
    return out;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    std::vector<Tensor> used;
    for (const Tensor& p : parts)
        if (p.defined() && p.dim(0) > 0) used.push_back(p);
    if (used.empty()) throw ArgumentError("concat_rows: nothing to concatenate");
    Shape tail(used[0].shape().begin() + 1, used[0].shape().end());
    int64_t total = 0;
    for (const Tensor& p : used) {
        Shape t(p.shape().begin() + 1, p.shape().end());
        if (t != tail)
            throw ShapeError("concat_rows: trailing dims differ: " + shape_str(p.shape()) + " vs " +
                             shape_str(used[0].shape()));
        total += p.dim(0);
    }
    Shape out_shape = used[0].shape();
    out_shape[0] = total;
    Tensor out = Tensor::zeros(std::move(out_shape));
    double* Y = out.data_mut().data();
    int64_t off = 0;
    std::vector<int64_t> offsets;
    for (const Tensor& p : used) {
        offsets.push_back(off);
        std::memcpy(Y + off, p.data().data(), sizeof(double) * static_cast<size_t>(p.numel()));
        off += p.numel();
    }
    bool any_grad = false;
    for (const Tensor& p : used) any_grad = any_grad || p.requires_grad();
    if (Tape::current() && any_grad) {
        Tensor ot = out;
        ot.set_requires_grad(true);
        std::vector<Tensor> pt = used;
        std::vector<bool> wants;
        for (Tensor& p : pt) {
            wants.push_back(p.requires_grad());
            if (p.requires_grad()) p.ensure_grad();
        }
        Tape::current()->record("concat_rows", [pt, ot, offsets, wants]() mutable {
            const double* dY = ot.grad().data();
            for (size_t i = 0; i < pt.size(); ++i) {
                if (!wants[i]) continue;
                double* dP = pt[i].grad_mut().data();
                const double* src = dY + offsets[i];
                const int64_t n = pt[i].numel();
#pragma omp parallel for schedule(static) if (n > kParCutoff)
                for (int64_t j = 0; j < n; ++j) dP[j] += src[j];
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// linear
// ---------------------------------------------------------------------------

namespace {

Tensor linear_impl(const Tensor& x, const Tensor& w, const Tensor* b) {
    if (w.ndim() != 2) throw ShapeError("linear: weight must be 2-D, got " + shape_str(w.shape()));
    const int64_t in = w.dim(0), out_dim = w.dim(1);
    if (x.dim(x.ndim() - 1) != in)
        throw ShapeError("linear: input width " + shape_str(x.shape()) + " does not match weight " +
                         shape_str(w.shape()));
    if (b && b->numel() != out_dim) throw ShapeError("linear: bias size mismatch");
    const int64_t rows = x.numel() / in;
    Shape out_shape = x.shape();
    out_shape.back() = out_dim;
    Tensor out = Tensor::zeros(std::move(out_shape));
    const double* X = x.data().data();
    const double* W = w.data().data();
    const double* Bp = b ? b->data().data() : nullptr;
    double* Y = out.data_mut().data();
    const int64_t work = rows * in * out_dim;
    MacCounter::add(MacKind::Linear, static_cast<uint64_t>(work));

#pragma omp parallel for schedule(static) if (work > kParCutoff)
    for (int64_t r = 0; r < rows; ++r) {
        const double* xr = X + r * in;
        double* yr = Y + r * out_dim;
        if (Bp)
            std::memcpy(yr, Bp, sizeof(double) * static_cast<size_t>(out_dim));
        for (int64_t i = 0; i < in; ++i) {
            const double xv = xr[i];
            const double* wr = W + i * out_dim;
            for (int64_t o = 0; o < out_dim; ++o) yr[o] += xv * wr[o];
        }
    }
    check_finite(out, "linear");

    const Tensor* bias_for_grad = b;
    if (want_grad({&x, &w, bias_for_grad})) {
        Tensor xt = x, wt = w, ot = out;
        Tensor btt;
        const bool gx = x.requires_grad(), gw = w.requires_grad();
        const bool gb = b && b->requires_grad();
        if (gx) xt.ensure_grad();
        if (gw) wt.ensure_grad();
        if (gb) {
            btt = *b;
            btt.ensure_grad();
        }
        ot.set_requires_grad(true);
        Tape::current()->record("linear", [xt, wt, btt, ot, rows, in, out_dim, gx, gw, gb]() mutable {
            const double* X = xt.data().data();
            const double* W = wt.data().data();
            const double* dY = ot.grad().data();
            if (gx) {
                double* dX = xt.grad_mut().data();
#pragma omp parallel for schedule(static) if (rows * in * out_dim > kParCutoff)
                for (int64_t r = 0; r < rows; ++r) {
                    const double* dyr = dY + r * out_dim;
                    double* dxr = dX + r * in;
                    for (int64_t i = 0; i < in; ++i) {
                        const double* wr = W + i * out_dim;
                        double acc = 0.0;
                        for (int64_t o = 0; o < out_dim; ++o) acc += dyr[o] * wr[o];
                        dxr[i] += acc;
                    }
                }
            }
            if (gw) {
                double* dW = wt.grad_mut().data();
#pragma omp parallel for schedule(static) if (rows * in * out_dim > kParCutoff)
                for (int64_t i = 0; i < in; ++i) {
                    double* dwr = dW + i * out_dim;
                    for (int64_t r = 0; r < rows; ++r) {
                        const double xv = X[r * in + i];
                        const double* dyr = dY + r * out_dim;
                        for (int64_t o = 0; o < out_dim; ++o) dwr[o] += xv * dyr[o];
                    }
                }
            }
            if (gb) {
                double* dB = btt.grad_mut().data();
                for (int64_t r = 0; r < rows; ++r) {
                    const double* dyr = dY + r * out_dim;
                    for (int64_t o = 0; o < out_dim; ++o) dB[o] += dyr[o];
                }
            }
        });
    }
    return out;
}

}  // namespace

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) { return linear_impl(x, w, &b); }
Tensor linear(const Tensor& x, const Tensor& w) { return linear_impl(x, w, nullptr); }

// ---------------------------------------------------------------------------
// grouped 3-D convolution
// ---------------------------------------------------------------------------

uint64_t conv3d_mac_count(std::array<int64_t, 3> in_dims, std::array<int64_t, 3> kernel,
                          std::array<int64_t, 3> stride, int64_t c_in, int64_t c_out, int64_t groups) {
    // Valid tap counts factorize per axis under SAME padding.
    uint64_t taps = 1;
    for (int d = 0; d < 3; ++d) {
        const int64_t in = in_dims[static_cast<size_t>(d)];
        const int64_t k = kernel[static_cast<size_t>(d)];
        const int64_t s = stride[static_cast<size_t>(d)];
        const int64_t out = conv_out_extent(in, s);
        const int64_t pad = std::max<int64_t>(0, (out - 1) * s + k - in) / 2;
        uint64_t axis_sum = 0;
        for (int64_t o = 0; o < out; ++o) {
            int64_t cnt = 0;
            for (int64_t t = 0; t < k; ++t) {
                const int64_t pos = o * s - pad + t;
                if (pos >= 0 && pos < in) ++cnt;
            }
            axis_sum += static_cast<uint64_t>(cnt);
        }
        taps *= axis_sum;
    }
    return taps * static_cast<uint64_t>(c_in / groups) * static_cast<uint64_t>(c_out);
}

Tensor grouped_conv3d(const Tensor& x, const Tensor& weight, const Tensor* bias,
                      std::array<int64_t, 3> stride, int64_t groups) {
    if (x.ndim() != 4) throw ShapeError("grouped_conv3d: input must be [T,H,W,C], got " + shape_str(x.shape()));
    if (weight.ndim() != 5)
        throw ShapeError("grouped_conv3d: weight must be [C_out,kt,kh,kw,C_in/groups], got " +
                         shape_str(weight.shape()));
    const int64_t T = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
    const int64_t Cout = weight.dim(0), KT = weight.dim(1), KH = weight.dim(2), KW = weight.dim(3);
    const int64_t Cpg = weight.dim(4);
    if (groups <= 0 || C % groups != 0 || Cout % groups != 0)
        throw ArgumentError("grouped_conv3d: groups=" + std::to_string(groups) + " does not divide channels " +
                            std::to_string(C) + "/" + std::to_string(Cout));
    if (Cpg != C / groups)
        throw ArgumentError("grouped_conv3d: weight expects " + std::to_string(Cpg) +
                            " channels per group, input provides " + std::to_string(C / groups));
    for (int64_t s : stride)
        if (s < 1) throw ArgumentError("grouped_conv3d: stride must be >= 1");
    if (bias && bias->numel() != Cout) throw ShapeError("grouped_conv3d: bias size mismatch");

    const int64_t To = conv_out_extent(T, stride[0]);
    const int64_t Ho = conv_out_extent(H, stride[1]);
    const int64_t Wo = conv_out_extent(W, stride[2]);
    const int64_t pt = std::max<int64_t>(0, (To - 1) * stride[0] + KT - T) / 2;
    const int64_t ph = std::max<int64_t>(0, (Ho - 1) * stride[1] + KH - H) / 2;
    const int64_t pw = std::max<int64_t>(0, (Wo - 1) * stride[2] + KW - W) / 2;
    const int64_t copg = Cout / groups;

    Tensor out = Tensor::zeros({To, Ho, Wo, Cout});
    const double* X = x.data().data();
    const double* Wt = weight.data().data();
    const double* Bp = bias ? bias->data().data() : nullptr;
    double* Y = out.data_mut().data();
    MacCounter::add(MacKind::Conv, conv3d_mac_count({T, H, W}, {KT, KH, KW}, stride, C, Cout, groups));
    const int64_t voxels = To * Ho * Wo;

#pragma omp parallel for schedule(static) if (voxels * Cout * KT * KH * KW * Cpg > kParCutoff)
    for (int64_t v = 0; v < voxels; ++v) {
        const int64_t to = v / (Ho * Wo);
        const int64_t ho = (v / Wo) % Ho;
        const int64_t wo = v % Wo;
        double* yr = Y + v * Cout;
        for (int64_t oc = 0; oc < Cout; ++oc) {
            const int64_t g = oc / copg;
            const int64_t ic0 = g * Cpg;
            double acc = Bp ? Bp[oc] : 0.0;
            for (int64_t kt = 0; kt < KT; ++kt) {
                const int64_t ti = to * stride[0] - pt + kt;
                if (ti < 0 || ti >= T) continue;
                for (int64_t kh = 0; kh < KH; ++kh) {
                    const int64_t hi = ho * stride[1] - ph + kh;
                    if (hi < 0 || hi >= H) continue;
                    for (int64_t kw = 0; kw < KW; ++kw) {
                        const int64_t wi = wo * stride[2] - pw + kw;
                        if (wi < 0 || wi >= W) continue;
                        const double* xr = X + ((ti * H + hi) * W + wi) * C + ic0;
                        const double* wr = Wt + (((oc * KT + kt) * KH + kh) * KW + kw) * Cpg;
                        for (int64_t c = 0; c < Cpg; ++c) acc += xr[c] * wr[c];
                    }
                }
            }
            yr[oc] = acc;
        }
    }
    check_finite(out, "grouped_conv3d");

    if (want_grad({&x, &weight, bias})) {
        Tensor xt = x, wt = weight, ot = out;
        Tensor bt;
        const bool gx = x.requires_grad(), gw = weight.requires_grad();
        const bool gb = bias && bias->requires_grad();
        if (gx) xt.ensure_grad();
        if (gw) wt.ensure_grad();
        if (gb) {
            bt = *bias;
            bt.ensure_grad();
        }
        ot.set_requires_grad(true);
        const std::array<int64_t, 3> st = stride;
        Tape::current()->record("grouped_conv3d", [xt, wt, bt, ot, st, groups, T, H, W, C, To, Ho, Wo, Cout, KT,
                                                   KH, KW, Cpg, pt, ph, pw, copg, gx, gw, gb]() mutable {
            const double* X = xt.data().data();
            const double* Wt = wt.data().data();
            const double* dY = ot.grad().data();
            if (gx) {
                double* dX = xt.grad_mut().data();
                const int64_t in_vox = T * H * W;
#pragma omp parallel for schedule(static) if (in_vox * C > kParCutoff)
                for (int64_t v = 0; v < in_vox; ++v) {
                    const int64_t ti = v / (H * W);
                    const int64_t hi = (v / W) % H;
                    const int64_t wi = v % W;
                    double* dxr = dX + v * C;
                    for (int64_t ic = 0; ic < C; ++ic) {
                        const int64_t g = ic / Cpg;
                        const int64_t icl = ic - g * Cpg;
                        double acc = 0.0;
                        for (int64_t kt = 0; kt < KT; ++kt) {
                            const int64_t tn = ti + pt - kt;
                            if (tn < 0 || tn % st[0] != 0) continue;
                            const int64_t to = tn / st[0];
                            if (to >= To) continue;
                            for (int64_t kh = 0; kh < KH; ++kh) {
                                const int64_t hn = hi + ph - kh;
                                if (hn < 0 || hn % st[1] != 0) continue;
                                const int64_t ho = hn / st[1];
                                if (ho >= Ho) continue;
                                for (int64_t kw = 0; kw < KW; ++kw) {
                                    const int64_t wn = wi + pw - kw;
                                    if (wn < 0 || wn % st[2] != 0) continue;
                                    const int64_t wo = wn / st[2];
                                    if (wo >= Wo) continue;
                                    const double* dyr = dY + ((to * Ho + ho) * Wo + wo) * Cout + g * copg;
                                    for (int64_t ocl = 0; ocl < copg; ++ocl) {
                                        const int64_t oc = g * copg + ocl;
                                        acc += dyr[ocl] * Wt[(((oc * KT + kt) * KH + kh) * KW + kw) * Cpg + icl];
                                    }
                                }
                            }
                        }
                        dxr[ic] += acc;
                    }
                }
            }
            if (gw) {
                double* dW = wt.grad_mut().data();
#pragma omp parallel for schedule(static) if (Cout * KT * KH * KW * Cpg > 64)
                for (int64_t oc = 0; oc < Cout; ++oc) {
                    const int64_t g = oc / copg;
                    const int64_t ic0 = g * Cpg;
                    for (int64_t kt = 0; kt < KT; ++kt)
                        for (int64_t kh = 0; kh < KH; ++kh)
                            for (int64_t kw = 0; kw < KW; ++kw) {
                                double* dwr = dW + (((oc * KT + kt) * KH + kh) * KW + kw) * Cpg;
                                for (int64_t to = 0; to < To; ++to) {
                                    const int64_t ti = to * st[0] - pt + kt;
                                    if (ti < 0 || ti >= T) continue;
                                    for (int64_t ho = 0; ho < Ho; ++ho) {
                                        const int64_t hi = ho * st[1] - ph + kh;
                                        if (hi < 0 || hi >= H) continue;
                                        for (int64_t wo = 0; wo < Wo; ++wo) {
                                            const int64_t wi = wo * st[2] - pw + kw;
                                            if (wi < 0 || wi >= W) continue;
                                            const double dy = dY[((to * Ho + ho) * Wo + wo) * Cout + oc];
                                            const double* xr = X + ((ti * H + hi) * W + wi) * C + ic0;
                                            for (int64_t c = 0; c < Cpg; ++c) dwr[c] += dy * xr[c];
                                        }
                                    }
                                }
                            }
                }
            }
            if (gb) {
                double* dB = bt.grad_mut().data();
                const int64_t voxels = To * Ho * Wo;
                for (int64_t v = 0; v < voxels; ++v) {
                    const double* dyr = dY + v * Cout;
                    for (int64_t oc = 0; oc < Cout; ++oc) dB[oc] += dyr[oc];
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// cross entropy
// ---------------------------------------------------------------------------

Tensor cross_entropy_logits(const Tensor& logits, const std::vector<int64_t>& labels) {
    if (logits.ndim() != 2) throw ShapeError("cross_entropy_logits: logits must be [B,K]");
    const int64_t B = logits.dim(0), K = logits.dim(1);
    if (static_cast<int64_t>(labels.size()) != B)
        throw ArgumentError("cross_entropy_logits: got " + std::to_string(labels.size()) + " labels for batch " +
                            std::to_string(B));
    for (int64_t y : labels)
        if (y < 0 || y >= K) throw ArgumentError("cross_entropy_logits: label out of range");
    const double* L = logits.data().data();
    double total = 0.0;
    for (int64_t b = 0; b < B; ++b) {
        const double* lr = L + b * K;
        double mx = lr[0];
        for (int64_t k = 1; k < K; ++k) mx = std::max(mx, lr[k]);
        double denom = 0.0;
        for (int64_t k = 0; k < K; ++k) denom += std::exp(lr[k] - mx);
        total += mx + std::log(denom) - lr[labels[static_cast<size_t>(b)]];
    }
    Tensor out = Tensor::scalar(total / static_cast<double>(B));
    check_finite(out, "cross_entropy_logits");
    if (want_grad({&logits})) {
        Tensor lt = logits, ot = out;
        ot.set_requires_grad(true);
        lt.ensure_grad();
        auto lab = std::make_shared<std::vector<int64_t>>(labels);
        Tape::current()->record("cross_entropy_logits", [lt, ot, lab, B, K]() mutable {
            const double g = ot.grad()[0] / static_cast<double>(B);
            const double* L = lt.data().data();
            double* dL = lt.grad_mut().data();
            for (int64_t b = 0; b < B; ++b) {
                const double* lr = L + b * K;
                double mx = lr[0];
                for (int64_t k = 1; k < K; ++k) mx = std::max(mx, lr[k]);
                double denom = 0.0;
                for (int64_t k = 0; k < K; ++k) denom += std::exp(lr[k] - mx);
                for (int64_t k = 0; k < K; ++k) {
                    const double p = std::exp(lr[k] - mx) / denom;
                    dL[b * K + k] += g * (p - (k == (*lab)[static_cast<size_t>(b)] ? 1.0 : 0.0));
                }
            }
        });
    }
    return out;
}

}  // namespace svt
