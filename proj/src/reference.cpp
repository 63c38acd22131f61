#include "svt/reference.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace svt::ref {

Vec matmul(const Vec& a, const Vec& b, int64_t p, int64_t q, int64_t r) {
    Vec c(static_cast<size_t>(p * r), 0.0);
    for (int64_t i = 0; i < p; ++i)
        for (int64_t j = 0; j < r; ++j) {
            double acc = 0.0;
            for (int64_t k = 0; k < q; ++k) acc += a[static_cast<size_t>(i * q + k)] * b[static_cast<size_t>(k * r + j)];
            c[static_cast<size_t>(i * r + j)] = acc;
        }
    return c;
}

Vec masked_softmax_slice(const Vec& x, const std::vector<uint8_t>& mask) {
    Vec y(x.size(), 0.0);
    double mx = -1e300;
    bool any = false;
    for (size_t i = 0; i < x.size(); ++i)
        if (mask[i]) {
            any = true;
            mx = std::max(mx, x[i]);
        }
    if (!any) return y;
    double denom = 0.0;
    for (size_t i = 0; i < x.size(); ++i)
        if (mask[i]) denom += std::exp(x[i] - mx);
    for (size_t i = 0; i < x.size(); ++i)
        if (mask[i]) y[i] = std::exp(x[i] - mx) / denom;
    return y;
}

Vec linear(const Vec& x, int64_t rows, int64_t in, int64_t out, const double* w, const double* b) {
    Vec y(static_cast<size_t>(rows * out), 0.0);
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t o = 0; o < out; ++o) {
            double acc = b ? b[o] : 0.0;
            for (int64_t i = 0; i < in; ++i) acc += x[static_cast<size_t>(r * in + i)] * w[i * out + o];
            y[static_cast<size_t>(r * out + o)] = acc;
        }
    return y;
}

Vec layernorm(const Vec& x, int64_t rows, int64_t c, const double* g, const double* b, double eps) {
    Vec y(x.size());
    for (int64_t r = 0; r < rows; ++r) {
        double mu = 0.0;
        for (int64_t i = 0; i < c; ++i) mu += x[static_cast<size_t>(r * c + i)];
        mu /= static_cast<double>(c);
        double var = 0.0;
        for (int64_t i = 0; i < c; ++i) {
            const double d = x[static_cast<size_t>(r * c + i)] - mu;
            var += d * d;
        }
        var /= static_cast<double>(c);
        const double is = 1.0 / std::sqrt(var + eps);
        for (int64_t i = 0; i < c; ++i)
            y[static_cast<size_t>(r * c + i)] = g[i] * ((x[static_cast<size_t>(r * c + i)] - mu) * is) + b[i];
    }
    return y;
}

double gelu1(double x) { return 0.5 * x * (1.0 + std::erf(x * 0.7071067811865475244)); }
double sigmoid1(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Vec conv3d(const Vec& x, int64_t t, int64_t h, int64_t w, int64_t c, const double* weight, const double* bias,
           int64_t c_out, int64_t kt, int64_t kh, int64_t kw, std::array<int64_t, 3> stride, int64_t groups) {
    const int64_t to = (t + stride[0] - 1) / stride[0];
    const int64_t ho = (h + stride[1] - 1) / stride[1];
    const int64_t wo = (w + stride[2] - 1) / stride[2];
    const int64_t pt = std::max<int64_t>(0, (to - 1) * stride[0] + kt - t) / 2;
    const int64_t ph = std::max<int64_t>(0, (ho - 1) * stride[1] + kh - h) / 2;
    const int64_t pw = std::max<int64_t>(0, (wo - 1) * stride[2] + kw - w) / 2;
    const int64_t cpg = c / groups;
    const int64_t copg = c_out / groups;
    Vec y(static_cast<size_t>(to * ho * wo * c_out), 0.0);
    for (int64_t a = 0; a < to; ++a)
        for (int64_t bq = 0; bq < ho; ++bq)
            for (int64_t cc = 0; cc < wo; ++cc)
                for (int64_t oc = 0; oc < c_out; ++oc) {
                    const int64_t g = oc / copg;
                    double acc = bias ? bias[oc] : 0.0;
                    for (int64_t i = 0; i < kt; ++i)
                        for (int64_t j = 0; j < kh; ++j)
                            for (int64_t k = 0; k < kw; ++k) {
                                const int64_t ti = a * stride[0] - pt + i;
                                const int64_t hi = bq * stride[1] - ph + j;
                                const int64_t wi = cc * stride[2] - pw + k;
                                if (ti < 0 || ti >= t || hi < 0 || hi >= h || wi < 0 || wi >= w) continue;
                                for (int64_t ic = 0; ic < cpg; ++ic)
                                    acc += x[static_cast<size_t>(((ti * h + hi) * w + wi) * c + g * cpg + ic)] *
                                           weight[(((oc * kt + i) * kh + j) * kw + k) * cpg + ic];
                            }
                    y[static_cast<size_t>(((a * ho + bq) * wo + cc) * c_out + oc)] = acc;
                }
    return y;
}

// ---------------------------------------------------------------------------
// SPM oracles
// ---------------------------------------------------------------------------

namespace {

struct WindowIter {
    GridDims grid;
    GridDims window;
    GridDims counts;
    int64_t n_windows, wsz;

    WindowIter(const std::optional<GridDims>& grid_opt, int64_t n, const std::optional<GridDims>& window_opt) {
        grid = grid_opt ? *grid_opt : GridDims{1, 1, n};
        window = window_opt ? *window_opt : grid;
        counts = GridDims{grid.t / window.t, grid.h / window.h, grid.w / window.w};
        n_windows = counts.count();
        wsz = window.count();
    }

    // original token index of slot j in window w (both row-major)
    int64_t token(int64_t w, int64_t j) const {
        const int64_t wt = w / (counts.h * counts.w);
        const int64_t wh = (w / counts.w) % counts.h;
        const int64_t ww = w % counts.w;
        const int64_t jt = j / (window.h * window.w);
        const int64_t jh = (j / window.w) % window.h;
        const int64_t jw = j % window.w;
        return ((wt * window.t + jt) * grid.h + (wh * window.h + jh)) * grid.w + (ww * window.w + jw);
    }
};

Vec score_map(const Vec& x, int64_t n, int64_t c, const Vec& protos, int64_t heads, int64_t m) {
    // [heads, m, n]
    const int64_t ch = c / heads;
    Vec s(static_cast<size_t>(heads * m * n), 0.0);
    for (int64_t hh = 0; hh < heads; ++hh)
        for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < n; ++j) {
                double acc = 0.0;
                for (int64_t d = 0; d < ch; ++d)
                    acc += x[static_cast<size_t>(j * c + hh * ch + d)] *
                           protos[static_cast<size_t>((hh * m + i) * ch + d)];
                s[static_cast<size_t>((hh * m + i) * n + j)] = acc;
            }
    return s;
}

std::vector<int64_t> top_k_tokens(const Vec& scores, int64_t heads, int64_t m, int64_t n, int64_t k) {
    if (k == 0) return {};
    Vec avg(static_cast<size_t>(n), 0.0);
    for (int64_t r = 0; r < heads * m; ++r)
        for (int64_t j = 0; j < n; ++j) avg[static_cast<size_t>(j)] += sigmoid1(scores[static_cast<size_t>(r * n + j)]);
    for (double& v : avg) v /= static_cast<double>(heads * m);
    std::vector<int64_t> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
        if (avg[static_cast<size_t>(a)] != avg[static_cast<size_t>(b)]) return avg[static_cast<size_t>(a)] > avg[static_cast<size_t>(b)];
        return a < b;
    });
    std::vector<int64_t> kept(order.begin(), order.begin() + k);
    std::sort(kept.begin(), kept.end());
    return kept;
}

}  // namespace

SpmRef spm_elitism(const Vec& x, int64_t n, int64_t c, const Vec& protos, int64_t heads, int64_t m, double theta,
                   const std::optional<GridDims>& grid, const std::optional<GridDims>& window, int64_t keep_top,
                   bool ensure_coverage) {
    const int64_t ch = c / heads;
    const WindowIter wi(grid, n, window);
    Vec s = score_map(x, n, c, protos, heads, m);

    std::vector<uint8_t> active(static_cast<size_t>(heads * m * n), 0);
    for (int64_t r = 0; r < heads * m; ++r)
        for (int64_t j = 0; j < n; ++j)
            active[static_cast<size_t>(r * n + j)] = sigmoid1(s[static_cast<size_t>(r * n + j)]) > theta ? 1 : 0;
    // empty-group fallback per (head, prototype, window)
    for (int64_t hh = 0; hh < heads; ++hh)
        for (int64_t i = 0; i < m; ++i)
            for (int64_t w = 0; w < wi.n_windows; ++w) {
                bool any = false;
                for (int64_t j = 0; j < wi.wsz && !any; ++j)
                    any = active[static_cast<size_t>((hh * m + i) * n + wi.token(w, j))] != 0;
                if (!any)
                    for (int64_t j = 0; j < wi.wsz; ++j)
                        active[static_cast<size_t>((hh * m + i) * n + wi.token(w, j))] = 1;
            }
    if (ensure_coverage) {
        for (int64_t hh = 0; hh < heads; ++hh)
            for (int64_t j = 0; j < n; ++j) {
                bool covered = false;
                for (int64_t i = 0; i < m && !covered; ++i) covered = active[static_cast<size_t>((hh * m + i) * n + j)] != 0;
                if (covered) continue;
                int64_t best = 0;
                double bv = sigmoid1(s[static_cast<size_t>((hh * m) * n + j)]);
                for (int64_t i = 1; i < m; ++i) {
                    const double v = sigmoid1(s[static_cast<size_t>((hh * m + i) * n + j)]);
                    if (v > bv) {
                        bv = v;
                        best = i;
                    }
                }
                active[static_cast<size_t>((hh * m + best) * n + j)] = 1;
            }
    }

    SpmRef out;
    out.pooled_rows = m * wi.n_windows;
    out.kept = top_k_tokens(s, heads, m, n, keep_top);
    out.rows = out.pooled_rows + keep_top;
    out.output.assign(static_cast<size_t>(out.rows * c), 0.0);

    for (size_t ki = 0; ki < out.kept.size(); ++ki)
        for (int64_t d = 0; d < c; ++d)
            out.output[ki * static_cast<size_t>(c) + static_cast<size_t>(d)] =
                x[static_cast<size_t>(out.kept[ki] * c + d)];

    // pooled rows: window-major, prototype-minor; heads concatenate channels
    for (int64_t hh = 0; hh < heads; ++hh)
        for (int64_t i = 0; i < m; ++i)
            for (int64_t w = 0; w < wi.n_windows; ++w) {
                double mx = -1e300;
                bool any = false;
                for (int64_t j = 0; j < wi.wsz; ++j) {
                    const int64_t tok = wi.token(w, j);
                    if (active[static_cast<size_t>((hh * m + i) * n + tok)]) {
                        any = true;
                        mx = std::max(mx, s[static_cast<size_t>((hh * m + i) * n + tok)]);
                    }
                }
                if (!any) continue;  // cannot happen after fallback
                double denom = 0.0;
                for (int64_t j = 0; j < wi.wsz; ++j) {
                    const int64_t tok = wi.token(w, j);
                    if (active[static_cast<size_t>((hh * m + i) * n + tok)])
                        denom += std::exp(s[static_cast<size_t>((hh * m + i) * n + tok)] - mx);
                }
                const int64_t row = keep_top + w * m + i;
                for (int64_t j = 0; j < wi.wsz; ++j) {
                    const int64_t tok = wi.token(w, j);
                    if (!active[static_cast<size_t>((hh * m + i) * n + tok)]) continue;
                    const double wj = std::exp(s[static_cast<size_t>((hh * m + i) * n + tok)] - mx) / denom;
                    for (int64_t d = 0; d < ch; ++d)
                        out.output[static_cast<size_t>(row * c + hh * ch + d)] +=
                            wj * x[static_cast<size_t>(tok * c + hh * ch + d)];
                }
            }
    return out;
}

SpmRef spm_neighbor(const Vec& x, int64_t n, int64_t c, const Vec& protos, int64_t heads, int64_t m,
                    const std::optional<GridDims>& grid, const std::optional<GridDims>& window, int64_t k_groups,
                    int64_t keep_top) {
    const int64_t ch = c / heads;
    const WindowIter wi(grid, n, window);
    const int64_t gsz = wi.wsz / k_groups;
    Vec s = score_map(x, n, c, protos, heads, m);

    SpmRef out;
    out.pooled_rows = m * k_groups * wi.n_windows;
    out.kept = top_k_tokens(s, heads, m, n, keep_top);
    out.rows = out.pooled_rows + keep_top;
    out.output.assign(static_cast<size_t>(out.rows * c), 0.0);
    for (size_t ki = 0; ki < out.kept.size(); ++ki)
        for (int64_t d = 0; d < c; ++d)
            out.output[ki * static_cast<size_t>(c) + static_cast<size_t>(d)] =
                x[static_cast<size_t>(out.kept[ki] * c + d)];

    std::vector<int64_t> order(static_cast<size_t>(wi.wsz));
    for (int64_t hh = 0; hh < heads; ++hh)
        for (int64_t i = 0; i < m; ++i)
            for (int64_t w = 0; w < wi.n_windows; ++w) {
                std::iota(order.begin(), order.end(), 0);
                std::sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
                    const double va = s[static_cast<size_t>((hh * m + i) * n + wi.token(w, a))];
                    const double vb = s[static_cast<size_t>((hh * m + i) * n + wi.token(w, b))];
                    if (va != vb) return va > vb;
                    return a < b;
                });
                for (int64_t g = 0; g < k_groups; ++g) {
                    double mx = -1e300;
                    for (int64_t q = 0; q < gsz; ++q)
                        mx = std::max(mx, s[static_cast<size_t>((hh * m + i) * n + wi.token(w, order[static_cast<size_t>(g * gsz + q)]))]);
                    double denom = 0.0;
                    for (int64_t q = 0; q < gsz; ++q)
                        denom += std::exp(s[static_cast<size_t>((hh * m + i) * n + wi.token(w, order[static_cast<size_t>(g * gsz + q)]))] - mx);
                    const int64_t row = keep_top + (w * m + i) * k_groups + g;
                    for (int64_t q = 0; q < gsz; ++q) {
                        const int64_t tok = wi.token(w, order[static_cast<size_t>(g * gsz + q)]);
                        const double wj = std::exp(s[static_cast<size_t>((hh * m + i) * n + tok)] - mx) / denom;
                        for (int64_t d = 0; d < ch; ++d)
                            out.output[static_cast<size_t>(row * c + hh * ch + d)] +=
                                wj * x[static_cast<size_t>(tok * c + hh * ch + d)];
                    }
                }
            }
    return out;
}

Vec avgpool_windows(const Vec& x, const GridDims& grid, int64_t c, const GridDims& window) {
    const WindowIter wi(grid, grid.count(), window);
    Vec y(static_cast<size_t>(wi.n_windows * c), 0.0);
    for (int64_t w = 0; w < wi.n_windows; ++w)
        for (int64_t d = 0; d < c; ++d) {
            double acc = 0.0;
            for (int64_t j = 0; j < wi.wsz; ++j) acc += x[static_cast<size_t>(wi.token(w, j) * c + d)];
            y[static_cast<size_t>(w * c + d)] = acc / static_cast<double>(wi.wsz);
        }
    return y;
}

Vec maxpool_windows(const Vec& x, const GridDims& grid, int64_t c, const GridDims& window) {
    const WindowIter wi(grid, grid.count(), window);
    Vec y(static_cast<size_t>(wi.n_windows * c), 0.0);
    for (int64_t w = 0; w < wi.n_windows; ++w)
        for (int64_t d = 0; d < c; ++d) {
            double best = x[static_cast<size_t>(wi.token(w, 0) * c + d)];
            for (int64_t j = 1; j < wi.wsz; ++j) best = std::max(best, x[static_cast<size_t>(wi.token(w, j) * c + d)]);
            y[static_cast<size_t>(w * c + d)] = best;
        }
    return y;
}

// ---------------------------------------------------------------------------
// block oracles
// ---------------------------------------------------------------------------

namespace {

Vec tensor_vec(const Tensor& t) { return Vec(t.data().begin(), t.data().end()); }

void softmax_rows_inplace(Vec& a, int64_t rows, int64_t cols) {
    for (int64_t r = 0; r < rows; ++r) {
        double mx = a[static_cast<size_t>(r * cols)];
        for (int64_t k = 1; k < cols; ++k) mx = std::max(mx, a[static_cast<size_t>(r * cols + k)]);
        double denom = 0.0;
        for (int64_t k = 0; k < cols; ++k) denom += std::exp(a[static_cast<size_t>(r * cols + k)] - mx);
        for (int64_t k = 0; k < cols; ++k)
            a[static_cast<size_t>(r * cols + k)] = std::exp(a[static_cast<size_t>(r * cols + k)] - mx) / denom;
    }
}

// attention with decomposed relative position bias, all heads
Vec biased_attention(const Vec& q, const Vec& k, const Vec& v, int64_t nq, int64_t nk, int64_t c, int64_t heads,
                     const MViTBlockParams& p, const std::vector<std::array<int64_t, 3>>& qc,
                     const std::vector<std::array<int64_t, 3>>& kc) {
    const int64_t d = c / heads;
    const double alpha = 1.0 / std::sqrt(static_cast<double>(d));
    const double* rt = p.rel_t.data().data();
    const double* rh = p.rel_h.data().data();
    const double* rw = p.rel_w.data().data();
    const int64_t st = p.rel_t.dim(1), sh = p.rel_h.dim(1), sw = p.rel_w.dim(1);
    const int64_t ot = (st - 1) / 2, oh = (sh - 1) / 2, ow = (sw - 1) / 2;

    Vec out(static_cast<size_t>(nq * c), 0.0);
    Vec a(static_cast<size_t>(nq * nk));
    for (int64_t hd = 0; hd < heads; ++hd) {
        for (int64_t iq = 0; iq < nq; ++iq)
            for (int64_t ik = 0; ik < nk; ++ik) {
                double acc = 0.0;
                for (int64_t dd = 0; dd < d; ++dd)
                    acc += q[static_cast<size_t>(iq * c + hd * d + dd)] * k[static_cast<size_t>(ik * c + hd * d + dd)];
                acc *= alpha;
                acc += rt[hd * st + (qc[static_cast<size_t>(iq)][0] - kc[static_cast<size_t>(ik)][0] + ot)];
                acc += rh[hd * sh + (qc[static_cast<size_t>(iq)][1] - kc[static_cast<size_t>(ik)][1] + oh)];
                acc += rw[hd * sw + (qc[static_cast<size_t>(iq)][2] - kc[static_cast<size_t>(ik)][2] + ow)];
                a[static_cast<size_t>(iq * nk + ik)] = acc;
            }
        softmax_rows_inplace(a, nq, nk);
        for (int64_t iq = 0; iq < nq; ++iq)
            for (int64_t dd = 0; dd < d; ++dd) {
                double acc = 0.0;
                for (int64_t ik = 0; ik < nk; ++ik)
                    acc += a[static_cast<size_t>(iq * nk + ik)] * v[static_cast<size_t>(ik * c + hd * d + dd)];
                out[static_cast<size_t>(iq * c + hd * d + dd)] = acc;
            }
    }
    return out;
}

std::vector<std::array<int64_t, 3>> strided_centers(const GridDims& fine, std::array<int64_t, 3> stride) {
    const GridDims g{(fine.t + stride[0] - 1) / stride[0], (fine.h + stride[1] - 1) / stride[1],
                     (fine.w + stride[2] - 1) / stride[2]};
    std::vector<std::array<int64_t, 3>> coords;
    for (int64_t t = 0; t < g.t; ++t)
        for (int64_t h = 0; h < g.h; ++h)
            for (int64_t w = 0; w < g.w; ++w)
                coords.push_back({t * stride[0] + (stride[0] - 1) / 2, h * stride[1] + (stride[1] - 1) / 2,
                                  w * stride[2] + (stride[2] - 1) / 2});
    return coords;
}

Vec mlp_part(const Vec& x1, int64_t rows, int64_t c, const MViTBlockParams& p) {
    const int64_t hm = p.w1.dim(1);
    Vec mm = layernorm(x1, rows, c, p.ln2_g.data().data(), p.ln2_b.data().data());
    mm = linear(mm, rows, c, hm, p.w1.data().data(), p.b1.data().data());
    for (double& v : mm) v = gelu1(v);
    mm = linear(mm, rows, hm, c, p.w2.data().data(), p.b2.data().data());
    Vec y(x1.size());
    for (size_t i = 0; i < y.size(); ++i) y[i] = x1[i] + mm[i];
    return y;
}

}  // namespace

Vec mhsa_block(const Vec& x, int64_t n, int64_t c, int64_t heads, const ViTBlockParams& p) {
    const int64_t d = c / heads;
    const double alpha = 1.0 / std::sqrt(static_cast<double>(d));
    Vec h = layernorm(x, n, c, p.ln1_g.data().data(), p.ln1_b.data().data());
    Vec q = linear(h, n, c, c, p.wq.data().data(), p.bq.data().data());
    Vec k = linear(h, n, c, c, p.wk.data().data(), p.bk.data().data());
    Vec v = linear(h, n, c, c, p.wv.data().data(), p.bv.data().data());
    Vec o(static_cast<size_t>(n * c), 0.0);
    Vec a(static_cast<size_t>(n * n));
    for (int64_t hd = 0; hd < heads; ++hd) {
        for (int64_t iq = 0; iq < n; ++iq)
            for (int64_t ik = 0; ik < n; ++ik) {
                double acc = 0.0;
                for (int64_t dd = 0; dd < d; ++dd)
                    acc += q[static_cast<size_t>(iq * c + hd * d + dd)] * k[static_cast<size_t>(ik * c + hd * d + dd)];
                a[static_cast<size_t>(iq * n + ik)] = acc * alpha;
            }
        softmax_rows_inplace(a, n, n);
        for (int64_t iq = 0; iq < n; ++iq)
            for (int64_t dd = 0; dd < d; ++dd) {
                double acc = 0.0;
                for (int64_t ik = 0; ik < n; ++ik)
                    acc += a[static_cast<size_t>(iq * n + ik)] * v[static_cast<size_t>(ik * c + hd * d + dd)];
                o[static_cast<size_t>(iq * c + hd * d + dd)] = acc;
            }
    }
    Vec proj = linear(o, n, c, c, p.wo.data().data(), p.bo.data().data());
    Vec x1(x.size());
    for (size_t i = 0; i < x.size(); ++i) x1[i] = x[i] + proj[i];
    const int64_t hm = p.w1.dim(1);
    Vec mm = layernorm(x1, n, c, p.ln2_g.data().data(), p.ln2_b.data().data());
    mm = linear(mm, n, c, hm, p.w1.data().data(), p.b1.data().data());
    for (double& vv : mm) vv = gelu1(vv);
    mm = linear(mm, n, hm, c, p.w2.data().data(), p.b2.data().data());
    Vec y(x.size());
    for (size_t i = 0; i < y.size(); ++i) y[i] = x1[i] + mm[i];
    return y;
}

Vec conv_attn_pool_block(const Vec& x, const MViTBlockPlan& plan, const MViTBlockParams& p,
                         const GridDims& attn_kernel) {
    const GridDims g = plan.grid_in;
    const int64_t n = g.count(), ci = plan.c_in, co = plan.c_out;
    Vec h = layernorm(x, n, ci, p.ln1_g.data().data(), p.ln1_b.data().data());

    auto path = [&](const Tensor& w, const Tensor& b, const Tensor& conv, std::array<int64_t, 3> stride) {
        Vec f = linear(h, n, ci, co, w.data().data(), b.data().data());
        return conv3d(f, g.t, g.h, g.w, co, conv.data().data(), nullptr, co, attn_kernel.t, attn_kernel.h,
                      attn_kernel.w, stride, co);
    };
    Vec q = path(p.wq, p.bq, p.convq, plan.q_stride);
    Vec k = path(p.wk, p.bk, p.convk, plan.kv_stride);
    Vec v = path(p.wv, p.bv, p.convv, plan.kv_stride);
    const int64_t nq = plan.grid_q.count(), nk = plan.grid_kv.count();

    Vec attn_v = biased_attention(q, k, v, nq, nk, co, plan.heads, p, strided_centers(g, plan.q_stride),
                                  strided_centers(g, plan.kv_stride));
    Vec o2(static_cast<size_t>(nq * co));
    for (size_t i = 0; i < o2.size(); ++i) o2[i] = q[i] + attn_v[i];
    Vec attn_out = linear(o2, nq, co, co, p.wo.data().data(), p.bo.data().data());

    Vec res = x;
    int64_t res_rows = n;
    if (plan.q_stride[0] > 1 || plan.q_stride[1] > 1 || plan.q_stride[2] > 1) {
        res = maxpool_windows(res, g, ci, GridDims{plan.q_stride[0], plan.q_stride[1], plan.q_stride[2]});
        res_rows = nq;
    }
    if (ci != co) res = linear(res, res_rows, ci, co, p.res_w.data().data(), p.res_b.data().data());

    Vec x1(static_cast<size_t>(nq * co));
    for (size_t i = 0; i < x1.size(); ++i) x1[i] = res[i] + attn_out[i];
    return mlp_part(x1, nq, co, p);
}

Vec semantic_attention_block(const Vec& x, const MViTBlockPlan& plan, const MViTBlockParams& p,
                             const SPMConfig& spm_cfg) {
    const GridDims g = plan.grid_in;
    const int64_t n = g.count(), c = plan.c_out;
    const int64_t m = spm_cfg.prototypes;
    Vec h = layernorm(x, n, c, p.ln1_g.data().data(), p.ln1_b.data().data());

    SpmRef sem = spm_elitism(h, n, c, tensor_vec(p.protos.e), spm_cfg.heads, m, spm_cfg.theta, g, spm_cfg.window,
                             0, true);
    const GridDims win = spm_cfg.window ? *spm_cfg.window : g;
    const GridDims counts{g.t / win.t, g.h / win.h, g.w / win.w};
    const int64_t n_sem = sem.pooled_rows;

    auto sem_path = [&](const Tensor& w, const Tensor& b, const Tensor& conv) {
        Vec f = linear(sem.output, n_sem, c, c, w.data().data(), b.data().data());
        // rows are window-major prototype-minor, so [Nt,Nh,Nw, M*C] is a view
        return conv3d(f, counts.t, counts.h, counts.w, m * c, conv.data().data(), nullptr, m * c, 3, 3, 3,
                      {1, 1, 1}, m * c);
    };
    Vec k_sem = sem_path(p.wk_sem, p.bk_sem, p.convk_sem);
    Vec v_sem = sem_path(p.wv_sem, p.bv_sem, p.convv_sem);

    Vec fq = linear(h, n, c, c, p.wq.data().data(), p.bq.data().data());
    Vec q = conv3d(fq, g.t, g.h, g.w, c, p.convq.data().data(), nullptr, c, 3, 3, 3, {1, 1, 1}, c);

    std::vector<std::array<int64_t, 3>> kc;
    for (int64_t wt = 0; wt < counts.t; ++wt)
        for (int64_t wh = 0; wh < counts.h; ++wh)
            for (int64_t ww = 0; ww < counts.w; ++ww)
                for (int64_t i = 0; i < m; ++i)
                    kc.push_back({wt * win.t + (win.t - 1) / 2, wh * win.h + (win.h - 1) / 2,
                                  ww * win.w + (win.w - 1) / 2});

    Vec attn_v = biased_attention(q, k_sem, v_sem, n, n_sem, c, plan.heads, p, strided_centers(g, {1, 1, 1}), kc);
    Vec o2(static_cast<size_t>(n * c));
    for (size_t i = 0; i < o2.size(); ++i) o2[i] = q[i] + attn_v[i];
    Vec attn_out = linear(o2, n, c, c, p.wo.data().data(), p.bo.data().data());

    Vec x1(static_cast<size_t>(n * c));
    for (size_t i = 0; i < x1.size(); ++i) x1[i] = x[i] + attn_out[i];
    return mlp_part(x1, n, c, p);
}

}  // namespace svt::ref
