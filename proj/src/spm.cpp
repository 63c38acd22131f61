#include "svt/spm.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>

#include "svt/macs.hpp"

namespace svt {

// ---------------------------------------------------------------------------
// SPMConfig
// ---------------------------------------------------------------------------

GridDims SPMConfig::effective_window(const std::optional<GridDims>& grid, int64_t n_tokens) const {
    if (window) return *window;
    if (grid) return *grid;
    return GridDims{1, 1, n_tokens};
}

int64_t SPMConfig::n_windows(const std::optional<GridDims>& grid, int64_t n_tokens) const {
    if (!window || !grid) return 1;
    return (grid->t / window->t) * (grid->h / window->h) * (grid->w / window->w);
}

int64_t SPMConfig::pooled_rows(const std::optional<GridDims>& grid, int64_t n_tokens) const {
    const int64_t k = variant == SpmVariant::Neighbor ? groups_k : 1;
    return prototypes * k * n_windows(grid, n_tokens);
}

int64_t SPMConfig::output_rows(const std::optional<GridDims>& grid, int64_t n_tokens) const {
    return pooled_rows(grid, n_tokens) + keep_top;
}

void SPMConfig::validate(int64_t n_tokens, const std::optional<GridDims>& grid, int64_t channels) const {
    if (prototypes < 1) throw ConfigError("spm: prototype count must be >= 1");
    if (!(theta > 0.0 && theta < 1.0))
        throw ConfigError("spm: theta must lie strictly inside (0,1), got " + std::to_string(theta));
    if (heads < 1) throw ConfigError("spm: heads must be >= 1");
    if (channels % heads != 0)
        throw ConfigError("spm: channel width " + std::to_string(channels) + " not divisible by " +
                          std::to_string(heads) + " heads");
    if (keep_top < 0) throw ConfigError("spm: keep_top must be >= 0");
    if (keep_top > n_tokens)
        throw ConfigError("spm: keep_top " + std::to_string(keep_top) + " exceeds token count " +
                          std::to_string(n_tokens));
    if (window) {
        if (!grid) throw ConfigError("spm: windowed pooling needs a grid; token sequence is flat (use GLOBAL)");
        if (window->t < 1 || window->h < 1 || window->w < 1) throw ConfigError("spm: window extents must be >= 1");
        if (grid->t % window->t != 0 || grid->h % window->h != 0 || grid->w % window->w != 0)
            throw ConfigError("spm: window " + std::to_string(window->t) + "x" + std::to_string(window->h) + "x" +
                              std::to_string(window->w) + " does not divide grid " + std::to_string(grid->t) + "x" +
                              std::to_string(grid->h) + "x" + std::to_string(grid->w));
    }
    if (variant == SpmVariant::Neighbor) {
        if (groups_k < 1) throw ConfigError("spm: neighbor grouping needs K >= 1");
        const GridDims win = effective_window(grid, n_tokens);
        if (win.count() % groups_k != 0)
            throw ConfigError("spm: window size " + std::to_string(win.count()) + " not divisible by K=" +
                              std::to_string(groups_k));
    }
}

// ---------------------------------------------------------------------------
// window partition
// ---------------------------------------------------------------------------

WindowLayout window_partition(const std::optional<GridDims>& grid, int64_t n_tokens,
                              const std::optional<GridDims>& window) {
    WindowLayout wl;
    if (window && grid) {
        if (grid->t % window->t != 0 || grid->h % window->h != 0 || grid->w % window->w != 0)
            throw ConfigError("window_partition: window does not divide grid");
        wl.window = *window;
        wl.counts = GridDims{grid->t / window->t, grid->h / window->h, grid->w / window->w};
    } else if (window && !grid) {
        throw ConfigError("window_partition: windowed layout requires a grid");
    } else {
        wl.window = grid ? *grid : GridDims{1, 1, n_tokens};
        wl.counts = GridDims{1, 1, 1};
    }
    wl.n_windows = wl.counts.count();
    wl.window_size = wl.window.count();

    auto perm = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(n_tokens));
    auto inverse = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(n_tokens));
    const GridDims g = grid ? *grid : GridDims{1, 1, n_tokens};
    int64_t pos = 0;
    for (int64_t wt = 0; wt < wl.counts.t; ++wt)
        for (int64_t wh = 0; wh < wl.counts.h; ++wh)
            for (int64_t ww = 0; ww < wl.counts.w; ++ww)
                for (int64_t jt = 0; jt < wl.window.t; ++jt)
                    for (int64_t jh = 0; jh < wl.window.h; ++jh)
                        for (int64_t jw = 0; jw < wl.window.w; ++jw) {
                            const int64_t t = wt * wl.window.t + jt;
                            const int64_t h = wh * wl.window.h + jh;
                            const int64_t w = ww * wl.window.w + jw;
                            const int64_t orig = (t * g.h + h) * g.w + w;
                            (*perm)[static_cast<size_t>(pos)] = orig;
                            (*inverse)[static_cast<size_t>(orig)] = pos;
                            ++pos;
                        }
    wl.perm = std::move(perm);
    wl.inverse = std::move(inverse);
    return wl;
}

// ---------------------------------------------------------------------------
// scores / elitism
// ---------------------------------------------------------------------------

namespace {

/// [N, C] -> [heads, N, C/heads]
Tensor split_heads(const Tensor& tokens, int64_t heads) {
    const int64_t n = tokens.dim(0), c = tokens.dim(1);
    if (heads == 1) return reshape(tokens, {1, n, c});
    return transpose(reshape(tokens, {n, heads, c / heads}), {1, 0, 2});
}

}  // namespace

ScoreMap compute_scores(const Tensor& tokens, const SemanticPrototypes& protos) {
    if (tokens.ndim() != 2) throw ShapeError("compute_scores: tokens must be [N,C]");
    const int64_t c = tokens.dim(1);
    const int64_t heads = protos.heads();
    if (heads * protos.width() != c)
        throw ConfigError("compute_scores: prototype width " + std::to_string(protos.width()) + " x " +
                          std::to_string(heads) + " heads does not match token width " + std::to_string(c));
    Tensor xh = split_heads(tokens, heads);             // [h, N, Ch]
    Tensor raw = matmul(protos.e, transpose(xh, {0, 2, 1}));  // [h, M, N]
    ScoreMap sm;
    sm.raw = raw;
    sm.compressed = sigmoid(raw);
    return sm;
}

ActiveMask elitism_filter(const ScoreMap& scores, const SPMConfig& cfg, const WindowLayout& wl) {
    const int64_t h = scores.raw.dim(0), m = scores.raw.dim(1), n = scores.raw.dim(2);
    ActiveMask am;
    am.mask = BoolArray::filled({h, m, n}, false);
    am.fallback = BoolArray::filled({h, m, wl.n_windows}, false);
    am.rescued = BoolArray::filled({h, m, n}, false);
    const double* comp = scores.compressed.data().data();
    const int64_t* perm = wl.perm->data();
    const int64_t rows = h * m;
#pragma omp parallel for schedule(static) if (rows * n > (1 << 14))
    for (int64_t r = 0; r < rows; ++r) {
        const double* cr = comp + r * n;
        uint8_t* mr = am.mask.v.data() + r * n;
        for (int64_t j = 0; j < n; ++j) mr[j] = cr[j] > cfg.theta ? 1 : 0;  // strict per the case split
        uint8_t* fb = am.fallback.v.data() + r * wl.n_windows;
        for (int64_t w = 0; w < wl.n_windows; ++w) {
            bool any = false;
            for (int64_t j = 0; j < wl.window_size && !any; ++j) any = mr[perm[w * wl.window_size + j]] != 0;
            if (!any) {
                for (int64_t j = 0; j < wl.window_size; ++j) mr[perm[w * wl.window_size + j]] = 1;
                fb[w] = 1;
            }
        }
    }
    return am;
}

void apply_coverage_rescue(ActiveMask& am, const ScoreMap& scores) {
    const int64_t h = scores.raw.dim(0), m = scores.raw.dim(1), n = scores.raw.dim(2);
    const double* comp = scores.compressed.data().data();
    for (int64_t hh = 0; hh < h; ++hh) {
        for (int64_t j = 0; j < n; ++j) {
            bool covered = false;
            for (int64_t i = 0; i < m && !covered; ++i) covered = am.mask.at((hh * m + i) * n + j);
            if (covered) continue;
            int64_t best = 0;
            double bv = comp[(hh * m + 0) * n + j];
            for (int64_t i = 1; i < m; ++i) {
                const double v = comp[(hh * m + i) * n + j];
                if (v > bv) {  // ties keep the lower prototype
                    bv = v;
                    best = i;
                }
            }
            am.mask.set((hh * m + best) * n + j, true);
            am.rescued.set((hh * m + best) * n + j, true);
        }
    }
}

std::pair<Tensor, std::vector<int64_t>> keep_top_k(const Tensor& tokens, const ScoreMap& scores, int64_t k) {
    const int64_t n = tokens.dim(0);
    if (k > n)
        throw ConfigError("keep_top_k: N_k=" + std::to_string(k) + " exceeds token count " + std::to_string(n));
    if (k == 0) return {Tensor::zeros({0, tokens.dim(1)}), {}};
    const int64_t h = scores.compressed.dim(0), m = scores.compressed.dim(1);
    const double* comp = scores.compressed.data().data();
    std::vector<double> avg(static_cast<size_t>(n), 0.0);
    for (int64_t r = 0; r < h * m; ++r)
        for (int64_t j = 0; j < n; ++j) avg[static_cast<size_t>(j)] += comp[r * n + j];
    const double inv = 1.0 / static_cast<double>(h * m);
    for (double& v : avg) v *= inv;

    IndexArray top = topk_indices(Tensor::from({n}, std::move(avg)), k, 0);
    std::vector<int64_t> kept = top.v;
    std::sort(kept.begin(), kept.end());  // preserve original relative order
    Tensor rows = gather_rows(tokens, kept);
    return {rows, kept};
}

// ---------------------------------------------------------------------------
// pooling kernels
// ---------------------------------------------------------------------------

namespace {

std::shared_ptr<std::vector<int64_t>> window_map_tokens(int64_t heads, int64_t n, int64_t ch,
                                                        const WindowLayout& wl) {
    auto map = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(heads * n * ch));
    const int64_t* perm = wl.perm->data();
    int64_t pos = 0;
    for (int64_t hh = 0; hh < heads; ++hh)
        for (int64_t s = 0; s < n; ++s) {
            const int64_t src = (hh * n + perm[s]) * ch;
            for (int64_t c = 0; c < ch; ++c) (*map)[static_cast<size_t>(pos++)] = src + c;
        }
    return map;
}

std::shared_ptr<std::vector<int64_t>> window_map_scores(int64_t heads, int64_t m, int64_t n,
                                                        const WindowLayout& wl) {
    auto map = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(heads * m * n));
    const int64_t* perm = wl.perm->data();
    int64_t pos = 0;
    for (int64_t r = 0; r < heads * m; ++r)
        for (int64_t s = 0; s < n; ++s) (*map)[static_cast<size_t>(pos++)] = r * n + perm[s];
    return map;
}

/// Elitism pooling: sw [h,M,Nw,Wsz], xw [h,Nw,Wsz,Ch], active mask in the
/// same window order. Returns [h,M,Nw,Ch]. Accumulation runs over active
/// slots sorted by (score desc, slot asc), which makes the pooled values
/// independent of the token order inside a window (tie-free inputs).
Tensor pool_active_sorted(const Tensor& sw, const Tensor& xw, const BoolArray& maskw,
                          std::shared_ptr<std::vector<double>>& weights) {
    const int64_t h = sw.dim(0), m = sw.dim(1), nw = sw.dim(2), wsz = sw.dim(3);
    const int64_t ch = xw.dim(3);
    const int64_t slots = h * m * nw;
    Tensor out = Tensor::zeros({h, m, nw, ch});
    weights = std::make_shared<std::vector<double>>(static_cast<size_t>(slots * wsz), 0.0);
    auto offsets = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(slots + 1), 0);
    const double* S = sw.data().data();
    const double* X = xw.data().data();
    const uint8_t* A = maskw.v.data();

    for (int64_t s = 0; s < slots; ++s) {
        int64_t cnt = 0;
        for (int64_t j = 0; j < wsz; ++j) cnt += A[s * wsz + j] ? 1 : 0;
        (*offsets)[static_cast<size_t>(s + 1)] = (*offsets)[static_cast<size_t>(s)] + cnt;
    }
    auto order = std::make_shared<std::vector<int32_t>>(static_cast<size_t>(offsets->back()));
    std::atomic<bool> empty{false};
    double* Wt = weights->data();
    double* Y = out.data_mut().data();

#pragma omp parallel for schedule(static) if (slots * wsz > (1 << 12))
    for (int64_t s = 0; s < slots; ++s) {
        const int64_t hh = s / (m * nw);
        const int64_t w = s % nw;
        const double* sr = S + s * wsz;
        const uint8_t* ar = A + s * wsz;
        int32_t* js = order->data() + (*offsets)[static_cast<size_t>(s)];
        int64_t cnt = 0;
        for (int64_t j = 0; j < wsz; ++j)
            if (ar[j]) js[cnt++] = static_cast<int32_t>(j);
        if (cnt == 0) {
            empty.store(true, std::memory_order_relaxed);
            continue;
        }
        std::sort(js, js + cnt, [&](int32_t a, int32_t b) {
            if (sr[a] != sr[b]) return sr[a] > sr[b];
            return a < b;
        });
        const double mx = sr[js[0]];
        double denom = 0.0;
        for (int64_t q = 0; q < cnt; ++q) denom += std::exp(sr[js[q]] - mx);
        double* yr = Y + s * ch;
        for (int64_t q = 0; q < cnt; ++q) {
            const double wj = std::exp(sr[js[q]] - mx) / denom;
            Wt[s * wsz + js[q]] = wj;
            const double* xr = X + ((hh * nw + w) * wsz + js[q]) * ch;
            for (int64_t c = 0; c < ch; ++c) yr[c] += wj * xr[c];
        }
    }
    if (empty.load())
        throw ContractError("pool_supertokens: empty (prototype, window) slice; elitism fallback missing");
    MacCounter::add(MacKind::Pool, static_cast<uint64_t>(offsets->back()) * static_cast<uint64_t>(ch));

    if (Tape::current() && (sw.requires_grad() || xw.requires_grad())) {
        Tensor st = sw, xt = xw, ot = out;
        ot.set_requires_grad(true);
        const bool gs = sw.requires_grad(), gx = xw.requires_grad();
        if (gs) st.ensure_grad();
        if (gx) xt.ensure_grad();
        auto wts = weights;
        Tape::current()->record("pool_supertokens", [st, xt, ot, wts, order, offsets, h, m, nw, wsz, ch, gs,
                                                     gx]() mutable {
            const double* X = xt.data().data();
            const double* dZ = ot.grad().data();
            const double* Wt = wts->data();
            double* dS = gs ? st.grad_mut().data() : nullptr;
            double* dX = gx ? xt.grad_mut().data() : nullptr;
            // Parallel over (head, window); prototypes stay serial because
            // they share token rows.
#pragma omp parallel for schedule(static) if (h * nw > 1)
            for (int64_t hw = 0; hw < h * nw; ++hw) {
                const int64_t hh = hw / nw, w = hw % nw;
                std::vector<double> g(static_cast<size_t>(wsz));
                for (int64_t i = 0; i < m; ++i) {
                    const int64_t s = (hh * m + i) * nw + w;
                    const int32_t* js = order->data() + (*offsets)[static_cast<size_t>(s)];
                    const int64_t cnt = (*offsets)[static_cast<size_t>(s + 1)] - (*offsets)[static_cast<size_t>(s)];
                    const double* dz = dZ + s * ch;
                    double zdot = 0.0;
                    for (int64_t q = 0; q < cnt; ++q) {
                        const double* xr = X + ((hh * nw + w) * wsz + js[q]) * ch;
                        double acc = 0.0;
                        for (int64_t c = 0; c < ch; ++c) acc += xr[c] * dz[c];
                        g[static_cast<size_t>(q)] = acc;
                        zdot += Wt[s * wsz + js[q]] * acc;
                    }
                    for (int64_t q = 0; q < cnt; ++q) {
                        const double wj = Wt[s * wsz + js[q]];
                        if (dS) dS[s * wsz + js[q]] += wj * (g[static_cast<size_t>(q)] - zdot);
                        if (dX) {
                            double* dxr = dX + ((hh * nw + w) * wsz + js[q]) * ch;
                            for (int64_t c = 0; c < ch; ++c) dxr[c] += wj * dz[c];
                        }
                    }
                }
            }
        });
    }
    return out;
}

/// Neighbor grouping: sort every (prototype, window) slice by score,
/// split into K contiguous rank groups, softmax inside each group, and
/// pool. Returns [h,M,Nw,K,Ch].
Tensor pool_groups_sorted(const Tensor& sw, const Tensor& xw, int64_t k_groups,
                          std::shared_ptr<std::vector<double>>& weights) {
    const int64_t h = sw.dim(0), m = sw.dim(1), nw = sw.dim(2), wsz = sw.dim(3);
    const int64_t ch = xw.dim(3);
    const int64_t slots = h * m * nw;
    const int64_t gsz = wsz / k_groups;
    Tensor out = Tensor::zeros({h, m, nw, k_groups, ch});
    weights = std::make_shared<std::vector<double>>(static_cast<size_t>(slots * wsz), 0.0);
    auto order = std::make_shared<std::vector<int32_t>>(static_cast<size_t>(slots * wsz));
    const double* S = sw.data().data();
    const double* X = xw.data().data();
    double* Wt = weights->data();
    double* Y = out.data_mut().data();

#pragma omp parallel for schedule(static) if (slots * wsz > (1 << 12))
    for (int64_t s = 0; s < slots; ++s) {
        const int64_t hh = s / (m * nw);
        const int64_t w = s % nw;
        const double* sr = S + s * wsz;
        int32_t* js = order->data() + s * wsz;
        std::iota(js, js + wsz, 0);
        std::sort(js, js + wsz, [&](int32_t a, int32_t b) {
            if (sr[a] != sr[b]) return sr[a] > sr[b];
            return a < b;
        });
        for (int64_t g = 0; g < k_groups; ++g) {
            const int32_t* gj = js + g * gsz;
            const double mx = sr[gj[0]];
            double denom = 0.0;
            for (int64_t q = 0; q < gsz; ++q) denom += std::exp(sr[gj[q]] - mx);
            double* yr = Y + (s * k_groups + g) * ch;
            for (int64_t q = 0; q < gsz; ++q) {
                const double wj = std::exp(sr[gj[q]] - mx) / denom;
                Wt[s * wsz + gj[q]] = wj;
                const double* xr = X + ((hh * nw + w) * wsz + gj[q]) * ch;
                for (int64_t c = 0; c < ch; ++c) yr[c] += wj * xr[c];
            }
        }
    }
    MacCounter::add(MacKind::Pool, static_cast<uint64_t>(slots * wsz) * static_cast<uint64_t>(ch));

    if (Tape::current() && (sw.requires_grad() || xw.requires_grad())) {
        Tensor st = sw, xt = xw, ot = out;
        ot.set_requires_grad(true);
        const bool gs = sw.requires_grad(), gx = xw.requires_grad();
        if (gs) st.ensure_grad();
        if (gx) xt.ensure_grad();
        auto wts = weights;
        Tape::current()->record("neighbor_pool", [st, xt, ot, wts, order, h, m, nw, wsz, ch, k_groups, gsz, gs,
                                                  gx]() mutable {
            const double* X = xt.data().data();
            const double* dZ = ot.grad().data();
            const double* Wt = wts->data();
            double* dS = gs ? st.grad_mut().data() : nullptr;
            double* dX = gx ? xt.grad_mut().data() : nullptr;
#pragma omp parallel for schedule(static) if (h * nw > 1)
            for (int64_t hw = 0; hw < h * nw; ++hw) {
                const int64_t hh = hw / nw, w = hw % nw;
                std::vector<double> g(static_cast<size_t>(gsz));
                for (int64_t i = 0; i < m; ++i) {
                    const int64_t s = (hh * m + i) * nw + w;
                    const int32_t* js = order->data() + s * wsz;
                    for (int64_t grp = 0; grp < k_groups; ++grp) {
                        const int32_t* gj = js + grp * gsz;
                        const double* dz = dZ + (s * k_groups + grp) * ch;
                        double zdot = 0.0;
                        for (int64_t q = 0; q < gsz; ++q) {
                            const double* xr = X + ((hh * nw + w) * wsz + gj[q]) * ch;
                            double acc = 0.0;
                            for (int64_t c = 0; c < ch; ++c) acc += xr[c] * dz[c];
                            g[static_cast<size_t>(q)] = acc;
                            zdot += Wt[s * wsz + gj[q]] * acc;
                        }
                        for (int64_t q = 0; q < gsz; ++q) {
                            const double wj = Wt[s * wsz + gj[q]];
                            if (dS) dS[s * wsz + gj[q]] += wj * (g[static_cast<size_t>(q)] - zdot);
                            if (dX) {
                                double* dxr = dX + ((hh * nw + w) * wsz + gj[q]) * ch;
                                for (int64_t c = 0; c < ch; ++c) dxr[c] += wj * dz[c];
                            }
                        }
                    }
                }
            }
        });
    }
    return out;
}

BoolArray permute_mask(const BoolArray& mask, const WindowLayout& wl, int64_t heads, int64_t m, int64_t n) {
    BoolArray out = BoolArray::filled({heads, m, wl.n_windows, wl.window_size}, false);
    const int64_t* perm = wl.perm->data();
    for (int64_t r = 0; r < heads * m; ++r)
        for (int64_t s = 0; s < n; ++s) out.v[static_cast<size_t>(r * n + s)] = mask.v[static_cast<size_t>(r * n + perm[s])];
    return out;
}

void scatter_weights(const std::vector<double>& win_order, const WindowLayout& wl, int64_t heads, int64_t m,
                     int64_t n, std::vector<double>& out) {
    out.assign(static_cast<size_t>(heads * m * n), 0.0);
    const int64_t* perm = wl.perm->data();
    for (int64_t r = 0; r < heads * m; ++r)
        for (int64_t s = 0; s < n; ++s)
            out[static_cast<size_t>(r * n + perm[s])] = win_order[static_cast<size_t>(r * n + s)];
}

}  // namespace

Tensor pool_supertokens(const Tensor& tokens, const ScoreMap& scores, const ActiveMask& mask,
                        const SPMConfig& cfg, const WindowLayout& wl, std::vector<double>* weights_out) {
    const int64_t n = tokens.dim(0), c = tokens.dim(1);
    const int64_t heads = cfg.heads, m = cfg.prototypes, ch = c / heads;
    Tensor xh = split_heads(tokens, heads);  // [h, N, Ch]
    Tensor xw = reindex(xh, window_map_tokens(heads, n, ch, wl), {heads, wl.n_windows, wl.window_size, ch});
    Tensor sw = reindex(scores.raw, window_map_scores(heads, m, n, wl), {heads, m, wl.n_windows, wl.window_size});
    BoolArray mw = permute_mask(mask.mask, wl, heads, m, n);
    std::shared_ptr<std::vector<double>> wts;
    Tensor pooled = pool_active_sorted(sw, xw, mw, wts);  // [h, M, Nw, Ch]
    if (weights_out) scatter_weights(*wts, wl, heads, m, n, *weights_out);
    // window-major, prototype-minor rows; heads concatenate on channels
    Tensor arranged = transpose(pooled, {2, 1, 0, 3});  // [Nw, M, h, Ch]
    return reshape(arranged, {wl.n_windows * m, c});
}

namespace {

Tensor pool_neighbor(const Tensor& tokens, const ScoreMap& scores, const SPMConfig& cfg, const WindowLayout& wl,
                     std::vector<double>* weights_out) {
    const int64_t n = tokens.dim(0), c = tokens.dim(1);
    const int64_t heads = cfg.heads, m = cfg.prototypes, ch = c / heads;
    Tensor xh = split_heads(tokens, heads);
    Tensor xw = reindex(xh, window_map_tokens(heads, n, ch, wl), {heads, wl.n_windows, wl.window_size, ch});
    Tensor sw = reindex(scores.raw, window_map_scores(heads, m, n, wl), {heads, m, wl.n_windows, wl.window_size});
    std::shared_ptr<std::vector<double>> wts;
    Tensor pooled = pool_groups_sorted(sw, xw, cfg.groups_k, wts);  // [h, M, Nw, K, Ch]
    if (weights_out) scatter_weights(*wts, wl, heads, m, n, *weights_out);
    Tensor arranged = transpose(pooled, {2, 1, 3, 0, 4});  // [Nw, M, K, h, Ch]
    return reshape(arranged, {wl.n_windows * m * cfg.groups_k, c});
}

}  // namespace

SupertokenSet spm_forward(const TokenGrid& x, const SemanticPrototypes& protos, const SPMConfig& cfg,
                          const Tensor* proj_w, const Tensor* proj_b) {
    cfg.validate(x.count(), x.grid, x.width());
    if (protos.heads() != cfg.heads)
        throw ConfigError("spm_forward: prototype tensor has " + std::to_string(protos.heads()) +
                          " heads, config wants " + std::to_string(cfg.heads));
    if (protos.count() != cfg.prototypes)
        throw ConfigError("spm_forward: prototype tensor has M=" + std::to_string(protos.count()) +
                          ", config wants " + std::to_string(cfg.prototypes));

    SupertokenSet out;
    out.heads = cfg.heads;
    out.prototypes = cfg.prototypes;
    out.scores = compute_scores(x.tokens, protos);
    out.layout = window_partition(x.grid, x.count(), cfg.window);

    if (cfg.variant == SpmVariant::Elitism) {
        out.mask = elitism_filter(out.scores, cfg, out.layout);
        if (cfg.ensure_coverage) apply_coverage_rescue(out.mask, out.scores);
        out.pooled = pool_supertokens(x.tokens, out.scores, out.mask, cfg, out.layout, &out.pool_weights);
    } else {
        out.pooled = pool_neighbor(x.tokens, out.scores, cfg, out.layout, &out.pool_weights);
    }

    auto [kept, kept_idx] = keep_top_k(x.tokens, out.scores, cfg.keep_top);
    out.kept = kept;
    out.kept_indices = std::move(kept_idx);

    Tensor seq = cfg.keep_top > 0 ? concat_rows({out.kept, out.pooled}) : out.pooled;
    if (cfg.output_projection) {
        if (!proj_w) throw ConfigError("spm_forward: output projection enabled but no projection weights given");
        seq = proj_b ? linear(seq, *proj_w, *proj_b) : linear(seq, *proj_w);
    }
    out.output = seq;
    return out;
}

SupertokenSet neighbor_grouping_forward(const TokenGrid& x, const SemanticPrototypes& protos,
                                        const SPMConfig& cfg, const Tensor* proj_w, const Tensor* proj_b) {
    if (cfg.variant != SpmVariant::Neighbor)
        throw ConfigError("neighbor_grouping_forward: config variant is not NEIGHBOR");
    return spm_forward(x, protos, cfg, proj_w, proj_b);
}

}  // namespace svt
