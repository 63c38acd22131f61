#include "svt/mvit.hpp"

#include <cmath>

namespace svt {

// ---------------------------------------------------------------------------
// plan
// ---------------------------------------------------------------------------

namespace {

GridDims strided(const GridDims& g, std::array<int64_t, 3> s) {
    return GridDims{conv_out_extent(g.t, s[0]), conv_out_extent(g.h, s[1]), conv_out_extent(g.w, s[2])};
}

bool is_unit(std::array<int64_t, 3> s) { return s[0] == 1 && s[1] == 1 && s[2] == 1; }

}  // namespace

MViTPlan mvit_plan(const MViTConfig& cfg) {
    if (cfg.stages.empty()) throw ConfigError("mvit: at least one stage required");
    for (int i = 0; i < 4; ++i)
        if (cfg.input[static_cast<size_t>(i)] < 1) throw ConfigError("mvit: input extents must be positive");
    if (cfg.stem_stride.t < 1 || cfg.stem_stride.h < 1 || cfg.stem_stride.w < 1)
        throw ConfigError("mvit: stem stride must be >= 1");

    MViTPlan plan;
    plan.stem_grid = GridDims{conv_out_extent(cfg.input[0], cfg.stem_stride.t),
                              conv_out_extent(cfg.input[1], cfg.stem_stride.h),
                              conv_out_extent(cfg.input[2], cfg.stem_stride.w)};

    int64_t total_blocks = 0;
    for (const MViTStage& s : cfg.stages) total_blocks += s.blocks;

    GridDims grid = plan.stem_grid;
    int64_t c_prev = cfg.stages[0].channels;
    int64_t index = 0;
    for (size_t si = 0; si < cfg.stages.size(); ++si) {
        const MViTStage& stage = cfg.stages[si];
        if (stage.blocks < 1) throw ConfigError("mvit: every stage needs at least one block");
        if (stage.channels < 1 || stage.heads < 1 || stage.channels % stage.heads != 0)
            throw ConfigError("mvit: stage channels must divide by heads");
        if (si > 0 && stage.channels != 2 * cfg.stages[si - 1].channels)
            throw ConfigError("mvit: channel width must double across stages (stage " + std::to_string(si) +
                              " has " + std::to_string(stage.channels) + ")");
        if (si == 0 && !is_unit(stage.q_stride))
            throw ConfigError("mvit: the first stage must not downsample (q_stride 1,1,1)");
        for (int64_t b = 0; b < stage.blocks; ++b) {
            ++index;
            MViTBlockPlan bp;
            bp.index = index;
            bp.stage = static_cast<int64_t>(si);
            bp.grid_in = grid;
            bp.c_in = c_prev;
            bp.c_out = stage.channels;
            bp.heads = stage.heads;
            bp.kv_stride = stage.kv_stride;
            bp.stage_transition = (b == 0 && si > 0);
            bp.q_stride = bp.stage_transition ? stage.q_stride : std::array<int64_t, 3>{1, 1, 1};
            const std::array<int64_t, 3> extents{grid.t, grid.h, grid.w};
            for (size_t d = 0; d < 3; ++d) {
                if (bp.q_stride[d] > extents[d] || bp.kv_stride[d] > extents[d])
                    throw ConfigError("mvit: pooling stride larger than grid extent at block " +
                                      std::to_string(index));
            }
            if (bp.stage_transition) {
                if (grid.t % bp.q_stride[0] != 0 || grid.h % bp.q_stride[1] != 0 || grid.w % bp.q_stride[2] != 0)
                    throw ConfigError("mvit: q_stride must divide the grid at stage transitions");
            }
            bp.grid_q = strided(grid, bp.q_stride);
            bp.grid_kv = strided(grid, bp.kv_stride);
            grid = bp.grid_q;
            c_prev = stage.channels;
            plan.blocks.push_back(bp);
        }
    }

    if (cfg.semantic_period > 0) {
        for (int64_t s = cfg.semantic_period; s <= total_blocks; s += cfg.semantic_period) {
            int64_t idx = s;
            if (plan.blocks[static_cast<size_t>(idx - 1)].stage_transition) ++idx;  // keep conv pooling there
            if (idx > total_blocks) break;
            MViTBlockPlan& bp = plan.blocks[static_cast<size_t>(idx - 1)];
            if (bp.stage_transition)
                throw ConfigError("mvit: semantic schedule collides with consecutive stage transitions");
            bp.semantic = true;
            // semantic attention keeps resolution and width
            bp.grid_q = bp.grid_in;
            bp.grid_kv = bp.grid_in;
            bp.q_stride = {1, 1, 1};
            bp.kv_stride = {1, 1, 1};
        }
        for (const MViTBlockPlan& bp : plan.blocks) {
            if (!bp.semantic) continue;
            if (cfg.spm.keep_top != 0)
                throw ConfigError("mvit: semantic attention requires keep_top == 0 (pure supertoken K/V)");
            cfg.spm.validate(bp.grid_in.count(), bp.grid_in, bp.c_in);
        }
    }
    return plan;
}

void MViTConfig::validate() const {
    if (num_classes < 2) throw ConfigError("mvit: num_classes must be >= 2");
    if (mlp_ratio <= 0) throw ConfigError("mvit: mlp_ratio must be positive");
    mvit_plan(*this);
}

// ---------------------------------------------------------------------------
// relative position bias
// ---------------------------------------------------------------------------

std::vector<std::array<int64_t, 3>> pooled_coords(const GridDims& fine, std::array<int64_t, 3> stride) {
    const GridDims g = strided(fine, stride);
    std::vector<std::array<int64_t, 3>> coords;
    coords.reserve(static_cast<size_t>(g.count()));
    for (int64_t t = 0; t < g.t; ++t)
        for (int64_t h = 0; h < g.h; ++h)
            for (int64_t w = 0; w < g.w; ++w)
                coords.push_back({t * stride[0] + (stride[0] - 1) / 2, h * stride[1] + (stride[1] - 1) / 2,
                                  w * stride[2] + (stride[2] - 1) / 2});
    return coords;
}

Tensor relpos_bias(const Tensor& rel_t, const Tensor& rel_h, const Tensor& rel_w,
                   const std::vector<std::array<int64_t, 3>>& q_coords,
                   const std::vector<std::array<int64_t, 3>>& k_coords) {
    const int64_t heads = rel_t.dim(0);
    const int64_t nq = static_cast<int64_t>(q_coords.size());
    const int64_t nk = static_cast<int64_t>(k_coords.size());
    const int64_t st = rel_t.dim(1), sh = rel_h.dim(1), sw = rel_w.dim(1);
    const int64_t ot = (st - 1) / 2, oh = (sh - 1) / 2, ow = (sw - 1) / 2;

    Tensor out = Tensor::zeros({heads, nq, nk});
    const double* T = rel_t.data().data();
    const double* H = rel_h.data().data();
    const double* W = rel_w.data().data();
    double* Y = out.data_mut().data();
    // offset indices are reused in the adjoint
    auto idx = std::make_shared<std::vector<int32_t>>(static_cast<size_t>(nq * nk * 3));
    for (int64_t q = 0; q < nq; ++q)
        for (int64_t k = 0; k < nk; ++k) {
            const int64_t dt = q_coords[static_cast<size_t>(q)][0] - k_coords[static_cast<size_t>(k)][0] + ot;
            const int64_t dh = q_coords[static_cast<size_t>(q)][1] - k_coords[static_cast<size_t>(k)][1] + oh;
            const int64_t dw = q_coords[static_cast<size_t>(q)][2] - k_coords[static_cast<size_t>(k)][2] + ow;
            if (dt < 0 || dt >= st || dh < 0 || dh >= sh || dw < 0 || dw >= sw)
                throw ContractError("relpos_bias: offset outside table range");
            (*idx)[static_cast<size_t>((q * nk + k) * 3 + 0)] = static_cast<int32_t>(dt);
            (*idx)[static_cast<size_t>((q * nk + k) * 3 + 1)] = static_cast<int32_t>(dh);
            (*idx)[static_cast<size_t>((q * nk + k) * 3 + 2)] = static_cast<int32_t>(dw);
        }
    const int32_t* I = idx->data();
#pragma omp parallel for schedule(static) if (heads * nq * nk > (1 << 14))
    for (int64_t hq = 0; hq < heads * nq; ++hq) {
        const int64_t hd = hq / nq, q = hq % nq;
        double* yr = Y + hq * nk;
        for (int64_t k = 0; k < nk; ++k) {
            const int32_t* e = I + (q * nk + k) * 3;
            yr[k] = T[hd * st + e[0]] + H[hd * sh + e[1]] + W[hd * sw + e[2]];
        }
    }

    if (Tape::current() && (rel_t.requires_grad() || rel_h.requires_grad() || rel_w.requires_grad())) {
        Tensor tt = rel_t, ht = rel_h, wt = rel_w, ot2 = out;
        ot2.set_requires_grad(true);
        tt.ensure_grad();
        ht.ensure_grad();
        wt.ensure_grad();
        Tape::current()->record("relpos_bias", [tt, ht, wt, ot2, idx, heads, nq, nk, st, sh, sw]() mutable {
            const double* dY = ot2.grad().data();
            double* dT = tt.grad_mut().data();
            double* dH = ht.grad_mut().data();
            double* dW = wt.grad_mut().data();
            const int32_t* I = idx->data();
            for (int64_t hd = 0; hd < heads; ++hd)
                for (int64_t q = 0; q < nq; ++q)
                    for (int64_t k = 0; k < nk; ++k) {
                        const double g = dY[(hd * nq + q) * nk + k];
                        const int32_t* e = I + (q * nk + k) * 3;
                        dT[hd * st + e[0]] += g;
                        dH[hd * sh + e[1]] += g;
                        dW[hd * sw + e[2]] += g;
                    }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// blocks
// ---------------------------------------------------------------------------

namespace {

Tensor split_heads_n(const Tensor& t, int64_t heads) {
    const int64_t n = t.dim(0), c = t.dim(1);
    return heads == 1 ? reshape(t, {1, n, c}) : transpose(reshape(t, {n, heads, c / heads}), {1, 0, 2});
}

Tensor merge_heads_n(const Tensor& t) {
    const int64_t heads = t.dim(0), n = t.dim(1), d = t.dim(2);
    return heads == 1 ? reshape(t, {n, d}) : reshape(transpose(t, {1, 0, 2}), {n, heads * d});
}

Tensor pool_path(const Tensor& tokens, const GridDims& grid, const Tensor& w, const Tensor& b,
                 const Tensor& conv_w, std::array<int64_t, 3> stride, const GridDims& kernel) {
    Tensor f = linear(tokens, w, b);
    const int64_t c = f.dim(1);
    Tensor g = reshape(f, {grid.t, grid.h, grid.w, c});
    Tensor pooled = grouped_conv3d(g, conv_w, nullptr, stride, c);  // depthwise
    const int64_t n_out = pooled.dim(0) * pooled.dim(1) * pooled.dim(2);
    return reshape(pooled, {n_out, c});
}

void mean_received(const Tensor& attn, std::vector<double>* out) {
    const int64_t heads = attn.dim(0), nq = attn.dim(1), nk = attn.dim(2);
    out->assign(static_cast<size_t>(nk), 0.0);
    const double* a = attn.data().data();
    const double inv = 1.0 / static_cast<double>(heads * nq);
    for (int64_t hq = 0; hq < heads * nq; ++hq)
        for (int64_t k = 0; k < nk; ++k) (*out)[static_cast<size_t>(k)] += a[hq * nk + k] * inv;
}

Tensor mlp_residual(const Tensor& x1, const MViTBlockParams& p) {
    Tensor m = layernorm(x1, p.ln2_g, p.ln2_b);
    m = linear(m, p.w1, p.b1);
    m = gelu(m);
    m = linear(m, p.w2, p.b2);
    return add(x1, m);
}

}  // namespace

TokenGrid conv_attn_pool_block(const TokenGrid& x, const MViTBlockPlan& plan, const MViTBlockParams& p,
                               const GridDims& attn_kernel, std::vector<double>* attn_recv) {
    if (!x.grid) throw ConfigError("conv_attn_pool_block: grid factorization required");
    const GridDims grid = *x.grid;
    const int64_t d = plan.c_out / plan.heads;

    Tensor h = layernorm(x.tokens, p.ln1_g, p.ln1_b);
    Tensor q = pool_path(h, grid, p.wq, p.bq, p.convq, plan.q_stride, attn_kernel);
    Tensor k = pool_path(h, grid, p.wk, p.bk, p.convk, plan.kv_stride, attn_kernel);
    Tensor v = pool_path(h, grid, p.wv, p.bv, p.convv, plan.kv_stride, attn_kernel);

    Tensor qh = split_heads_n(q, plan.heads);
    Tensor kh = split_heads_n(k, plan.heads);
    Tensor vh = split_heads_n(v, plan.heads);

    Tensor scores = scale(matmul(qh, transpose(kh, {0, 2, 1})), 1.0 / std::sqrt(static_cast<double>(d)));
    Tensor bias = relpos_bias(p.rel_t, p.rel_h, p.rel_w, pooled_coords(grid, plan.q_stride),
                              pooled_coords(grid, plan.kv_stride));
    Tensor attn = softmax(add(scores, bias), 2);
    if (attn_recv) mean_received(attn, attn_recv);

    Tensor o = merge_heads_n(matmul(attn, vh));
    Tensor attn_out = linear(add(q, o), p.wo, p.bo);  // residual pooling connection: q + attn*v

    Tensor res = x.tokens;
    if (plan.q_stride[0] > 1 || plan.q_stride[1] > 1 || plan.q_stride[2] > 1) {
        TokenGrid rg{res, grid};
        res = reduce_maxpool(rg, GridDims{plan.q_stride[0], plan.q_stride[1], plan.q_stride[2]}).tokens;
    }
    if (plan.c_in != plan.c_out) res = linear(res, p.res_w, p.res_b);

    Tensor x1 = add(res, attn_out);
    return TokenGrid{mlp_residual(x1, p), plan.grid_q};
}

TokenGrid semantic_attention_block(const TokenGrid& x, const MViTBlockPlan& plan, const MViTBlockParams& p,
                                   const SPMConfig& spm_cfg, SemanticBlockTrace* trace) {
    if (!x.grid) throw ConfigError("semantic_attention_block: grid factorization required");
    const GridDims grid = *x.grid;
    const int64_t c = plan.c_out;
    const int64_t d = c / plan.heads;
    const int64_t m = spm_cfg.prototypes;

    Tensor h = layernorm(x.tokens, p.ln1_g, p.ln1_b);

    SPMConfig cfg = spm_cfg;
    cfg.ensure_coverage = true;  // every token must reach K/V through some pool
    TokenGrid hg{h, grid};
    SupertokenSet st = spm_forward(hg, p.protos, cfg);
    const WindowLayout& wl = st.layout;
    const int64_t n_sem = wl.n_windows * m;

    // K/V: linear on each supertoken, then depthwise conv over the window
    // grid with M*C channels, stride 1.
    auto sem_path = [&](const Tensor& w, const Tensor& b, const Tensor& conv_w) {
        Tensor f = linear(st.output, w, b);  // [n_sem, C]
        Tensor g = reshape(f, {wl.counts.t, wl.counts.h, wl.counts.w, m * c});
        Tensor pooled = grouped_conv3d(g, conv_w, nullptr, {1, 1, 1}, m * c);
        return reshape(pooled, {n_sem, c});
    };
    Tensor k_sem = sem_path(p.wk_sem, p.bk_sem, p.convk_sem);
    Tensor v_sem = sem_path(p.wv_sem, p.bv_sem, p.convv_sem);

    Tensor q = pool_path(h, grid, p.wq, p.bq, p.convq, {1, 1, 1}, GridDims{3, 3, 3});

    Tensor qh = split_heads_n(q, plan.heads);
    Tensor kh = split_heads_n(k_sem, plan.heads);
    Tensor vh = split_heads_n(v_sem, plan.heads);

    // Semantic tokens take the integer center coordinate of their source
    // window; all M prototypes of a window share it.
    std::vector<std::array<int64_t, 3>> k_coords;
    k_coords.reserve(static_cast<size_t>(n_sem));
    for (int64_t wt = 0; wt < wl.counts.t; ++wt)
        for (int64_t wh = 0; wh < wl.counts.h; ++wh)
            for (int64_t ww = 0; ww < wl.counts.w; ++ww)
                for (int64_t i = 0; i < m; ++i)
                    k_coords.push_back({wt * wl.window.t + (wl.window.t - 1) / 2,
                                        wh * wl.window.h + (wl.window.h - 1) / 2,
                                        ww * wl.window.w + (wl.window.w - 1) / 2});

    Tensor scores = scale(matmul(qh, transpose(kh, {0, 2, 1})), 1.0 / std::sqrt(static_cast<double>(d)));
    Tensor bias = relpos_bias(p.rel_t, p.rel_h, p.rel_w, pooled_coords(grid, {1, 1, 1}), k_coords);
    Tensor attn = softmax(add(scores, bias), 2);
    if (trace) {
        trace->set = st;
        mean_received(attn, &trace->attn_received);
    }

    Tensor o = merge_heads_n(matmul(attn, vh));
    Tensor attn_out = linear(add(q, o), p.wo, p.bo);
    Tensor x1 = add(x.tokens, attn_out);
    return TokenGrid{mlp_residual(x1, p), grid};
}

// ---------------------------------------------------------------------------
// MViTModel
// ---------------------------------------------------------------------------

MViTModel::MViTModel(MViTConfig cfg, uint64_t seed) : cfg_(std::move(cfg)), plan_(mvit_plan(cfg_)) {
    Rng rng(seed);
    const int64_t ch_in = cfg_.input[3];
    const int64_t c0 = cfg_.stages[0].channels;
    {
        const int64_t fan_in = cfg_.stem_kernel.count() * ch_in;
        const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in + c0));
        params_.add_randn("stem.weight", {c0, cfg_.stem_kernel.t, cfg_.stem_kernel.h, cfg_.stem_kernel.w, ch_in},
                          rng, stddev);
        params_.add_const("stem.bias", {c0}, 0.0);
    }

    for (const MViTBlockPlan& bp : plan_.blocks) {
        const std::string pre = "block" + std::to_string(bp.index) + ".";
        MViTBlockParams p;
        const int64_t ci = bp.c_in, co = bp.c_out;
        const int64_t hm = static_cast<int64_t>(co * cfg_.mlp_ratio + 0.5);
        p.ln1_g = params_.add_const(pre + "ln1.gamma", {ci}, 1.0);
        p.ln1_b = params_.add_const(pre + "ln1.beta", {ci}, 0.0);
        p.wq = params_.add_xavier(pre + "attn.wq", ci, co, rng);
        p.bq = params_.add_const(pre + "attn.bq", {co}, 0.0);
        p.wk = params_.add_xavier(pre + "attn.wk", ci, co, rng);
        p.bk = params_.add_const(pre + "attn.bk", {co}, 0.0);
        p.wv = params_.add_xavier(pre + "attn.wv", ci, co, rng);
        p.bv = params_.add_const(pre + "attn.bv", {co}, 0.0);
        const GridDims kk = cfg_.attn_kernel;
        const double conv_std = std::sqrt(1.0 / static_cast<double>(kk.count()));
        if (!bp.semantic) {
            p.convq = params_.add_randn(pre + "attn.convq", {co, kk.t, kk.h, kk.w, 1}, rng, conv_std);
            p.convk = params_.add_randn(pre + "attn.convk", {co, kk.t, kk.h, kk.w, 1}, rng, conv_std);
            p.convv = params_.add_randn(pre + "attn.convv", {co, kk.t, kk.h, kk.w, 1}, rng, conv_std);
        } else {
            p.convq = params_.add_randn(pre + "attn.convq", {co, 3, 3, 3, 1}, rng, conv_std);
        }
        p.rel_t = params_.add_const(pre + "attn.rel_t", {bp.heads, 2 * bp.grid_in.t - 1}, 0.0);
        p.rel_h = params_.add_const(pre + "attn.rel_h", {bp.heads, 2 * bp.grid_in.h - 1}, 0.0);
        p.rel_w = params_.add_const(pre + "attn.rel_w", {bp.heads, 2 * bp.grid_in.w - 1}, 0.0);
        p.wo = params_.add_xavier(pre + "attn.wo", co, co, rng);
        p.bo = params_.add_const(pre + "attn.bo", {co}, 0.0);
        if (ci != co) {
            p.res_w = params_.add_xavier(pre + "res.weight", ci, co, rng);
            p.res_b = params_.add_const(pre + "res.bias", {co}, 0.0);
        }
        p.ln2_g = params_.add_const(pre + "ln2.gamma", {co}, 1.0);
        p.ln2_b = params_.add_const(pre + "ln2.beta", {co}, 0.0);
        p.w1 = params_.add_xavier(pre + "mlp.w1", co, hm, rng);
        p.b1 = params_.add_const(pre + "mlp.b1", {hm}, 0.0);
        p.w2 = params_.add_xavier(pre + "mlp.w2", hm, co, rng);
        p.b2 = params_.add_const(pre + "mlp.b2", {co}, 0.0);

        if (bp.semantic) {
            const int64_t m = cfg_.spm.prototypes;
            p.protos.e = params_.add_randn(pre + "spm.prototypes", {cfg_.spm.heads, m, co / cfg_.spm.heads}, rng,
                                           1.0 / std::sqrt(static_cast<double>(co)));
            p.wk_sem = params_.add_xavier(pre + "attn.wk_sem", co, co, rng);
            p.bk_sem = params_.add_const(pre + "attn.bk_sem", {co}, 0.0);
            p.wv_sem = params_.add_xavier(pre + "attn.wv_sem", co, co, rng);
            p.bv_sem = params_.add_const(pre + "attn.bv_sem", {co}, 0.0);
            p.convk_sem = params_.add_randn(pre + "attn.convk_sem", {m * co, 3, 3, 3, 1}, rng, conv_std);
            p.convv_sem = params_.add_randn(pre + "attn.convv_sem", {m * co, 3, 3, 3, 1}, rng, conv_std);
        }
        blocks_.push_back(std::move(p));
    }

    const int64_t c_last = cfg_.stages.back().channels;
    params_.add_randn("head.weight", {c_last, cfg_.num_classes}, rng, 0.02);
    params_.add_const("head.bias", {cfg_.num_classes}, 0.0);
}

Tensor MViTModel::run(const Tensor& video, MViTTrace* trace) {
    Tensor stem = grouped_conv3d(video, params_.get("stem.weight"), &params_.get("stem.bias"),
                                 {cfg_.stem_stride.t, cfg_.stem_stride.h, cfg_.stem_stride.w}, 1);
    const GridDims g0 = plan_.stem_grid;
    TokenGrid tg{reshape(stem, {g0.count(), cfg_.stages[0].channels}), g0};

    for (size_t bi = 0; bi < plan_.blocks.size(); ++bi) {
        const MViTBlockPlan& bp = plan_.blocks[bi];
        if (bp.semantic) {
            SemanticBlockTrace sem;
            tg = semantic_attention_block(tg, bp, blocks_[bi], cfg_.spm, trace ? &sem : nullptr);
            if (trace) trace->semantic.push_back(std::move(sem));
        } else {
            tg = conv_attn_pool_block(tg, bp, blocks_[bi], cfg_.attn_kernel, nullptr);
            if (trace) trace->semantic.push_back(std::nullopt);
        }
        if (trace) {
            trace->layer_tokens.push_back(tg.tokens);
            trace->layer_grids.push_back(tg.grid);
        }
    }

    Tensor pooled = reshape(mean(tg.tokens, 0), {1, cfg_.stages.back().channels});
    Tensor logits = linear(pooled, params_.get("head.weight"), params_.get("head.bias"));
    return reshape(logits, {cfg_.num_classes});
}

Tensor MViTModel::forward(const Tensor& video) { return run(video, nullptr); }

MViTTrace MViTModel::forward_trace(const Tensor& video) {
    MViTTrace trace;
    trace.logits = run(video, &trace);
    return trace;
}

}  // namespace svt
