#include "svt/vit.hpp"

#include <cmath>

namespace svt {

void ViTConfig::validate() const {
    if (depth < 0) throw ConfigError("vit: depth must be >= 0");
    if (embed_dim < 1) throw ConfigError("vit: embed_dim must be >= 1");
    if (heads < 1 || embed_dim % heads != 0)
        throw ConfigError("vit: embed_dim " + std::to_string(embed_dim) + " not divisible by " +
                          std::to_string(heads) + " heads");
    if (mlp_hidden() < 1) throw ConfigError("vit: mlp_ratio too small");
    if (num_classes < 2) throw ConfigError("vit: num_classes must be >= 2");
    for (int i = 0; i < 4; ++i)
        if (input[static_cast<size_t>(i)] < 1) throw ConfigError("vit: input extents must be positive");
    if (patch.t < 1 || patch.h < 1 || patch.w < 1) throw ConfigError("vit: patch extents must be positive");
    if (input[0] % patch.t != 0 || input[1] % patch.h != 0 || input[2] % patch.w != 0)
        throw ConfigError("vit: input " + std::to_string(input[0]) + "x" + std::to_string(input[1]) + "x" +
                          std::to_string(input[2]) + " not divisible by patch " + std::to_string(patch.t) + "x" +
                          std::to_string(patch.h) + "x" + std::to_string(patch.w));
    vit_token_plan(*this);  // walks the schedule and validates every site
}

TokenPlan vit_token_plan(const ViTConfig& cfg) {
    TokenPlan plan;
    std::optional<GridDims> grid = cfg.token_grid();
    int64_t n = cfg.tokens();
    plan.counts.push_back(n);
    plan.grids.push_back(grid);
    size_t si = 0;
    int64_t prev_layer = 0;
    for (int64_t layer = 1; layer <= cfg.depth; ++layer) {
        if (si < cfg.schedule.size() && cfg.schedule[si].layer == layer) {
            const SpmScheduleEntry& e = cfg.schedule[si];
            if (e.layer <= prev_layer) throw ConfigError("vit: spm_schedule must be strictly increasing in layer");
            prev_layer = e.layer;
            switch (e.kind) {
                case ReduceKind::Spm: {
                    e.spm.validate(n, grid, cfg.embed_dim);
                    n = e.spm.output_rows(grid, n);
                    plan.spm_rows.push_back(n);
                    grid.reset();  // pooled + kept rows no longer form a (T,H,W) grid
                    break;
                }
                case ReduceKind::AvgPool:
                case ReduceKind::MaxPool: {
                    if (!grid) throw ConfigError("vit: pooling reducer at layer " + std::to_string(layer) +
                                                 " needs a grid, but an earlier SPM removed it");
                    if (e.pool_window.t < 1 || e.pool_window.h < 1 || e.pool_window.w < 1)
                        throw ConfigError("vit: pool window extents must be positive");
                    if (grid->t % e.pool_window.t != 0 || grid->h % e.pool_window.h != 0 ||
                        grid->w % e.pool_window.w != 0)
                        throw ConfigError("vit: pool window does not divide grid at layer " + std::to_string(layer));
                    grid = GridDims{grid->t / e.pool_window.t, grid->h / e.pool_window.h,
                                    grid->w / e.pool_window.w};
                    n = grid->count();
                    plan.spm_rows.push_back(n);
                    break;
                }
            }
            ++si;
        }
        plan.counts.push_back(n);
        plan.grids.push_back(grid);
    }
    if (si != cfg.schedule.size())
        throw ConfigError("vit: spm_schedule layer out of range (depth is " + std::to_string(cfg.depth) + ")");
    return plan;
}

Tensor patch_embed(const Tensor& video, const GridDims& patch, int64_t in_channels, const Tensor& w,
                   const Tensor& b, const Tensor& pos) {
    if (video.ndim() != 4) throw ShapeError("patch_embed: video must be [F,H,W,ch]");
    const int64_t F = video.dim(0), H = video.dim(1), W = video.dim(2), ch = video.dim(3);
    if (ch != in_channels) throw ConfigError("patch_embed: channel count mismatch");
    if (F % patch.t != 0 || H % patch.h != 0 || W % patch.w != 0)
        throw ConfigError("patch_embed: input " + shape_str(video.shape()) + " not divisible by patch");
    const int64_t T = F / patch.t, Hg = H / patch.h, Wg = W / patch.w;
    const int64_t n = T * Hg * Wg;
    const int64_t pv = patch.t * patch.h * patch.w * ch;

    auto map = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(n * pv));
    int64_t pos_i = 0;
    for (int64_t t = 0; t < T; ++t)
        for (int64_t h = 0; h < Hg; ++h)
            for (int64_t w_ = 0; w_ < Wg; ++w_)
                for (int64_t it = 0; it < patch.t; ++it)
                    for (int64_t ih = 0; ih < patch.h; ++ih)
                        for (int64_t iw = 0; iw < patch.w; ++iw)
                            for (int64_t ic = 0; ic < ch; ++ic)
                                (*map)[static_cast<size_t>(pos_i++)] =
                                    (((t * patch.t + it) * H + (h * patch.h + ih)) * W + (w_ * patch.w + iw)) * ch +
                                    ic;
    Tensor patches = reindex(video, map, {n, pv});
    Tensor x = linear(patches, w, b);
    return add(x, pos);
}

Tensor mhsa_block(const Tensor& x, const ViTBlockParams& p, int64_t heads, std::vector<double>* attn_recv) {
    const int64_t n = x.dim(0), c = x.dim(1);
    const int64_t d = c / heads;
    Tensor h = layernorm(x, p.ln1_g, p.ln1_b);
    Tensor q = linear(h, p.wq, p.bq);
    Tensor k = linear(h, p.wk, p.bk);
    Tensor v = linear(h, p.wv, p.bv);
    auto split = [&](const Tensor& t) {
        return heads == 1 ? reshape(t, {1, n, d}) : transpose(reshape(t, {n, heads, d}), {1, 0, 2});
    };
    Tensor qh = split(q), kh = split(k), vh = split(v);
    Tensor scores = scale(matmul(qh, transpose(kh, {0, 2, 1})), 1.0 / std::sqrt(static_cast<double>(d)));
    Tensor attn = softmax(scores, 2);
    if (attn_recv) {
        attn_recv->assign(static_cast<size_t>(n), 0.0);
        const double* a = attn.data().data();
        const double inv = 1.0 / static_cast<double>(heads * n);
        for (int64_t hd = 0; hd < heads; ++hd)
            for (int64_t qq = 0; qq < n; ++qq)
                for (int64_t kk = 0; kk < n; ++kk)
                    (*attn_recv)[static_cast<size_t>(kk)] += a[(hd * n + qq) * n + kk] * inv;
    }
    Tensor o = matmul(attn, vh);  // [heads, N, d]
    Tensor merged = heads == 1 ? reshape(o, {n, c}) : reshape(transpose(o, {1, 0, 2}), {n, c});
    Tensor x1 = add(x, linear(merged, p.wo, p.bo));
    Tensor m = layernorm(x1, p.ln2_g, p.ln2_b);
    m = linear(m, p.w1, p.b1);
    m = gelu(m);
    m = linear(m, p.w2, p.b2);
    return add(x1, m);
}

namespace {

Tensor window_rows(const TokenGrid& x, const WindowLayout& wl) {
    const int64_t n = x.count(), c = x.width();
    auto map = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(n * c));
    const int64_t* perm = wl.perm->data();
    int64_t pos = 0;
    for (int64_t s = 0; s < n; ++s)
        for (int64_t cc = 0; cc < c; ++cc) (*map)[static_cast<size_t>(pos++)] = perm[s] * c + cc;
    return reindex(x.tokens, map, {wl.n_windows, wl.window_size, c});
}

}  // namespace

TokenGrid reduce_avgpool(const TokenGrid& x, const GridDims& window) {
    if (!x.grid) throw ConfigError("reduce_avgpool: token grid factorization absent");
    WindowLayout wl = window_partition(x.grid, x.count(), window);
    Tensor pooled = mean(window_rows(x, wl), 1);
    return TokenGrid{pooled, wl.counts};
}

TokenGrid reduce_maxpool(const TokenGrid& x, const GridDims& window) {
    if (!x.grid) throw ConfigError("reduce_maxpool: token grid factorization absent");
    WindowLayout wl = window_partition(x.grid, x.count(), window);
    Tensor pooled = max_reduce(window_rows(x, wl), 1);
    return TokenGrid{pooled, wl.counts};
}

// ---------------------------------------------------------------------------
// ViTModel
// ---------------------------------------------------------------------------

ViTModel::ViTModel(ViTConfig cfg, uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(seed);
    const int64_t c = cfg_.embed_dim;
    const int64_t pv = cfg_.patch.t * cfg_.patch.h * cfg_.patch.w * cfg_.input[3];
    params_.add_xavier("patch.weight", pv, c, rng);
    params_.add_const("patch.bias", {c}, 0.0);
    params_.add_randn("pos", {cfg_.tokens(), c}, rng, 0.02);

    const int64_t hm = cfg_.mlp_hidden();
    for (int64_t i = 1; i <= cfg_.depth; ++i) {
        const std::string pre = "block" + std::to_string(i) + ".";
        ViTBlockParams p;
        p.ln1_g = params_.add_const(pre + "ln1.gamma", {c}, 1.0);
        p.ln1_b = params_.add_const(pre + "ln1.beta", {c}, 0.0);
        p.wq = params_.add_xavier(pre + "attn.wq", c, c, rng);
        p.bq = params_.add_const(pre + "attn.bq", {c}, 0.0);
        p.wk = params_.add_xavier(pre + "attn.wk", c, c, rng);
        p.bk = params_.add_const(pre + "attn.bk", {c}, 0.0);
        p.wv = params_.add_xavier(pre + "attn.wv", c, c, rng);
        p.bv = params_.add_const(pre + "attn.bv", {c}, 0.0);
        p.wo = params_.add_xavier(pre + "attn.wo", c, c, rng);
        p.bo = params_.add_const(pre + "attn.bo", {c}, 0.0);
        p.ln2_g = params_.add_const(pre + "ln2.gamma", {c}, 1.0);
        p.ln2_b = params_.add_const(pre + "ln2.beta", {c}, 0.0);
        p.w1 = params_.add_xavier(pre + "mlp.w1", c, hm, rng);
        p.b1 = params_.add_const(pre + "mlp.b1", {hm}, 0.0);
        p.w2 = params_.add_xavier(pre + "mlp.w2", hm, c, rng);
        p.b2 = params_.add_const(pre + "mlp.b2", {c}, 0.0);
        blocks_.push_back(std::move(p));
    }

    for (const SpmScheduleEntry& e : cfg_.schedule) {
        if (e.kind != ReduceKind::Spm) continue;
        const std::string pre = "spm" + std::to_string(e.layer) + ".";
        SemanticPrototypes protos;
        protos.e = params_.add_randn(pre + "prototypes", {e.spm.heads, e.spm.prototypes, c / e.spm.heads}, rng,
                                     1.0 / std::sqrt(static_cast<double>(c)));
        spm_protos_.push_back(protos);
        if (e.spm.output_projection) {
            params_.add_xavier(pre + "proj.weight", c, c, rng);
            params_.add_const(pre + "proj.bias", {c}, 0.0);
        }
    }

    params_.add_randn("head.weight", {c, cfg_.num_classes}, rng, 0.02);
    params_.add_const("head.bias", {cfg_.num_classes}, 0.0);
}

Tensor ViTModel::run(const Tensor& video, ForwardTrace* trace) {
    Tensor x = patch_embed(video, cfg_.patch, cfg_.input[3], params_.get("patch.weight"),
                           params_.get("patch.bias"), params_.get("pos"));
    TokenGrid tg{x, cfg_.token_grid()};
    size_t si = 0, spm_i = 0;
    for (int64_t i = 1; i <= cfg_.depth; ++i) {
        std::vector<double> recv;
        tg.tokens = mhsa_block(tg.tokens, blocks_[static_cast<size_t>(i - 1)], cfg_.heads,
                               trace ? &recv : nullptr);
        if (trace) trace->attn_received.push_back(std::move(recv));
        if (si < cfg_.schedule.size() && cfg_.schedule[si].layer == i) {
            const SpmScheduleEntry& e = cfg_.schedule[si];
            switch (e.kind) {
                case ReduceKind::Spm: {
                    const std::string pre = "spm" + std::to_string(e.layer) + ".";
                    const Tensor* pw = nullptr;
                    const Tensor* pb = nullptr;
                    if (e.spm.output_projection) {
                        pw = &params_.get(pre + "proj.weight");
                        pb = &params_.get(pre + "proj.bias");
                    }
                    SupertokenSet st = spm_forward(tg, spm_protos_[spm_i], e.spm, pw, pb);
                    if (trace) trace->spm.push_back({i, st, tg.count(), tg.grid});
                    tg = TokenGrid{st.output, std::nullopt};
                    ++spm_i;
                    break;
                }
                case ReduceKind::AvgPool:
                    tg = reduce_avgpool(tg, e.pool_window);
                    break;
                case ReduceKind::MaxPool:
                    tg = reduce_maxpool(tg, e.pool_window);
                    break;
            }
            ++si;
        }
        if (trace) {
            trace->layer_tokens.push_back(tg.tokens);
            trace->layer_grids.push_back(tg.grid);
        }
    }
    Tensor pooled = reshape(mean(tg.tokens, 0), {1, cfg_.embed_dim});
    Tensor logits = linear(pooled, params_.get("head.weight"), params_.get("head.bias"));
    return reshape(logits, {cfg_.num_classes});
}

Tensor ViTModel::forward(const Tensor& video) { return run(video, nullptr); }

ForwardTrace ViTModel::forward_trace(const Tensor& video) {
    ForwardTrace trace;
    trace.logits = run(video, &trace);
    return trace;
}

}  // namespace svt
