#include "svt/flops.hpp"

#include <cinttypes>
#include <cstdio>
#include <ostream>

namespace svt {

uint64_t FlopReport::total_macs() const {
    uint64_t t = 0;
    for (const FlopRow& r : rows) t += r.macs;
    return t;
}

uint64_t FlopReport::total_params() const {
    uint64_t t = 0;
    for (const FlopRow& r : rows) t += r.params;
    return t;
}

uint64_t FlopReport::total_macs_of_kind(const std::string& kind) const {
    uint64_t t = 0;
    for (const FlopRow& r : rows)
        if (r.kind == kind) t += r.macs;
    return t;
}

void FlopReport::write_csv(std::ostream& os) const {
    os << "layer,kind,tokens_in,tokens_out,macs,params\n";
    for (const FlopRow& r : rows)
        os << r.layer << ',' << r.kind << ',' << r.tokens_in << ',' << r.tokens_out << ',' << r.macs << ','
           << r.params << '\n';
}

void FlopReport::write_text(std::ostream& os) const {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%-28s %-8s %9s %9s %16s %12s\n", "layer", "kind", "tok_in", "tok_out",
                  "MACs", "params");
    os << (model_name.empty() ? "" : "model: " + model_name + "\n") << buf;
    for (const FlopRow& r : rows) {
        std::snprintf(buf, sizeof(buf), "%-28s %-8s %9" PRId64 " %9" PRId64 " %16" PRIu64 " %12" PRIu64 "\n",
                      r.layer.c_str(), r.kind.c_str(), r.tokens_in, r.tokens_out, r.macs, r.params);
        os << buf;
    }
    std::snprintf(buf, sizeof(buf), "total: %" PRIu64 " MACs = %.2f GFLOPs per view, %" PRIu64 " params\n",
                  total_macs(), gflops(), total_params());
    os << buf;
    if (views_space != 1 || views_time != 1) {
        std::snprintf(buf, sizeof(buf), "views %" PRId64 "x%" PRId64 ": %.2f GFLOPs\n", views_space, views_time,
                      gflops_with_views());
        os << buf;
    }
}

// ---------------------------------------------------------------------------
// ViT audit
// ---------------------------------------------------------------------------

FlopReport audit_vit(const ViTConfig& cfg) {
    cfg.validate();
    const TokenPlan plan = vit_token_plan(cfg);
    const int64_t c = cfg.embed_dim;
    const int64_t hm = cfg.mlp_hidden();
    const int64_t n0 = cfg.tokens();
    const int64_t pv = cfg.patch.t * cfg.patch.h * cfg.patch.w * cfg.input[3];
    const uint64_t uc = static_cast<uint64_t>(c);

    FlopReport rep;
    rep.rows.push_back({"patch.embed", "linear", n0, n0, static_cast<uint64_t>(n0 * pv) * uc,
                        static_cast<uint64_t>(pv) * uc + uc});
    rep.rows.push_back({"pos", "other", n0, n0, 0, static_cast<uint64_t>(n0) * uc});

    size_t si = 0;
    for (int64_t i = 1; i <= cfg.depth; ++i) {
        const int64_t n = plan.counts[static_cast<size_t>(i - 1)];
        const uint64_t un = static_cast<uint64_t>(n);
        const std::string pre = "block" + std::to_string(i);
        rep.rows.push_back({pre + ".attn.proj", "linear", n, n, 4 * un * uc * uc, 4 * (uc * uc + uc)});
        rep.rows.push_back({pre + ".attn.matmul", "matmul", n, n, 2 * un * un * uc, 0});
        rep.rows.push_back({pre + ".mlp", "linear", n, n, 2 * un * uc * static_cast<uint64_t>(hm),
                            2 * uc * static_cast<uint64_t>(hm) + static_cast<uint64_t>(hm) + uc});
        if (si < cfg.schedule.size() && cfg.schedule[si].layer == i) {
            const SpmScheduleEntry& e = cfg.schedule[si];
            const int64_t n_out = plan.counts[static_cast<size_t>(i)];
            const std::string sp = "spm" + std::to_string(i);
            if (e.kind == ReduceKind::Spm) {
                rep.rows.push_back({sp + ".score", "matmul", n, n, static_cast<uint64_t>(e.spm.prototypes) * un * uc,
                                    static_cast<uint64_t>(e.spm.prototypes) * uc});
                rep.rows.push_back({sp + ".pool", "pool", n, n_out,
                                    static_cast<uint64_t>(e.spm.prototypes) * un * uc, 0});
                if (e.spm.output_projection)
                    rep.rows.push_back({sp + ".proj", "linear", n_out, n_out,
                                        static_cast<uint64_t>(n_out) * uc * uc, uc * uc + uc});
            } else {
                rep.rows.push_back({sp + (e.kind == ReduceKind::AvgPool ? ".avgpool" : ".maxpool"), "other", n,
                                    n_out, 0, 0});
            }
            ++si;
        }
    }
    rep.rows.push_back({"head", "linear", plan.counts.back(), 1,
                        uc * static_cast<uint64_t>(cfg.num_classes),
                        uc * static_cast<uint64_t>(cfg.num_classes) + static_cast<uint64_t>(cfg.num_classes)});
    return rep;
}

// ---------------------------------------------------------------------------
// MViT audit
// ---------------------------------------------------------------------------

FlopReport audit_mvit(const MViTConfig& cfg) {
    cfg.validate();
    const MViTPlan plan = mvit_plan(cfg);
    FlopReport rep;

    const int64_t ch_in = cfg.input[3];
    const int64_t c0 = cfg.stages[0].channels;
    const int64_t n0 = plan.stem_grid.count();
    rep.rows.push_back({"stem", "conv", cfg.input[0] * cfg.input[1] * cfg.input[2], n0,
                        conv3d_mac_count({cfg.input[0], cfg.input[1], cfg.input[2]},
                                         {cfg.stem_kernel.t, cfg.stem_kernel.h, cfg.stem_kernel.w},
                                         {cfg.stem_stride.t, cfg.stem_stride.h, cfg.stem_stride.w}, ch_in, c0, 1),
                        static_cast<uint64_t>(c0) * static_cast<uint64_t>(cfg.stem_kernel.count()) *
                                static_cast<uint64_t>(ch_in) +
                            static_cast<uint64_t>(c0)});

    const GridDims kk = cfg.attn_kernel;
    for (const MViTBlockPlan& bp : plan.blocks) {
        const std::string pre = "block" + std::to_string(bp.index);
        const int64_t n_in = bp.grid_in.count(), n_q = bp.grid_q.count(), n_kv = bp.grid_kv.count();
        const uint64_t ci = static_cast<uint64_t>(bp.c_in), co = static_cast<uint64_t>(bp.c_out);
        const int64_t hm = static_cast<int64_t>(bp.c_out * cfg.mlp_ratio + 0.5);
        const uint64_t relpos_params =
            static_cast<uint64_t>(bp.heads) *
            static_cast<uint64_t>((2 * bp.grid_in.t - 1) + (2 * bp.grid_in.h - 1) + (2 * bp.grid_in.w - 1));

        if (!bp.semantic) {
            rep.rows.push_back({pre + ".attn.proj", "linear", n_in, n_q,
                                3 * static_cast<uint64_t>(n_in) * ci * co + static_cast<uint64_t>(n_q) * co * co,
                                3 * (ci * co + co) + co * co + co});
            const uint64_t conv_macs =
                conv3d_mac_count({bp.grid_in.t, bp.grid_in.h, bp.grid_in.w}, {kk.t, kk.h, kk.w}, bp.q_stride,
                                 bp.c_out, bp.c_out, bp.c_out) +
                2 * conv3d_mac_count({bp.grid_in.t, bp.grid_in.h, bp.grid_in.w}, {kk.t, kk.h, kk.w}, bp.kv_stride,
                                     bp.c_out, bp.c_out, bp.c_out);
            rep.rows.push_back({pre + ".attn.conv", "conv", n_in, n_q, conv_macs,
                                3 * co * static_cast<uint64_t>(kk.count())});
            rep.rows.push_back({pre + ".attn.matmul", "matmul", n_q, n_kv,
                                2 * static_cast<uint64_t>(n_q) * static_cast<uint64_t>(n_kv) * co, 0});
            rep.rows.push_back({pre + ".relpos", "other", n_q, n_kv, 0, relpos_params});
            if (bp.c_in != bp.c_out)
                rep.rows.push_back({pre + ".res.proj", "linear", n_q, n_q,
                                    static_cast<uint64_t>(n_q) * ci * co, ci * co + co});
        } else {
            const int64_t m = cfg.spm.prototypes;
            const int64_t n_win = cfg.spm.n_windows(bp.grid_in, n_in);
            const int64_t n_sem = m * n_win;
            const GridDims counts = cfg.spm.window
                                        ? GridDims{bp.grid_in.t / cfg.spm.window->t, bp.grid_in.h / cfg.spm.window->h,
                                                   bp.grid_in.w / cfg.spm.window->w}
                                        : GridDims{1, 1, 1};
            rep.rows.push_back({pre + ".spm.score", "matmul", n_in, n_in,
                                static_cast<uint64_t>(m) * static_cast<uint64_t>(n_in) * co,
                                static_cast<uint64_t>(m) * co});
            rep.rows.push_back({pre + ".spm.pool", "pool", n_in, n_sem,
                                static_cast<uint64_t>(m) * static_cast<uint64_t>(n_in) * co, 0});
            rep.rows.push_back({pre + ".attn.proj", "linear", n_in, n_q,
                                static_cast<uint64_t>(n_in) * co * co +
                                    2 * static_cast<uint64_t>(n_sem) * co * co +
                                    static_cast<uint64_t>(n_q) * co * co,
                                4 * (co * co + co)});
            const uint64_t conv_macs =
                conv3d_mac_count({bp.grid_in.t, bp.grid_in.h, bp.grid_in.w}, {3, 3, 3}, {1, 1, 1}, bp.c_out,
                                 bp.c_out, bp.c_out) +
                2 * conv3d_mac_count({counts.t, counts.h, counts.w}, {3, 3, 3}, {1, 1, 1}, m * bp.c_out,
                                     m * bp.c_out, m * bp.c_out);
            rep.rows.push_back({pre + ".attn.conv", "conv", n_in, n_q, conv_macs,
                                co * 27 + 2 * static_cast<uint64_t>(m) * co * 27});
            rep.rows.push_back({pre + ".attn.matmul", "matmul", n_q, n_sem,
                                2 * static_cast<uint64_t>(n_q) * static_cast<uint64_t>(n_sem) * co, 0});
            rep.rows.push_back({pre + ".relpos", "other", n_q, n_sem, 0, relpos_params});
        }
        rep.rows.push_back({pre + ".mlp", "linear", n_q, n_q,
                            2 * static_cast<uint64_t>(n_q) * co * static_cast<uint64_t>(hm),
                            2 * co * static_cast<uint64_t>(hm) + static_cast<uint64_t>(hm) + co});
    }

    const uint64_t c_last = static_cast<uint64_t>(cfg.stages.back().channels);
    rep.rows.push_back({"head", "linear", plan.blocks.back().grid_q.count(), 1,
                        c_last * static_cast<uint64_t>(cfg.num_classes),
                        c_last * static_cast<uint64_t>(cfg.num_classes) + static_cast<uint64_t>(cfg.num_classes)});
    return rep;
}

FlopReport audit_model(const AnyModelConfig& cfg) {
    if (std::holds_alternative<ViTConfig>(cfg)) return audit_vit(std::get<ViTConfig>(cfg));
    return audit_mvit(std::get<MViTConfig>(cfg));
}

std::array<int64_t, 4> input_of(const AnyModelConfig& cfg) {
    if (std::holds_alternative<ViTConfig>(cfg)) return std::get<ViTConfig>(cfg).input;
    return std::get<MViTConfig>(cfg).input;
}

int64_t final_token_count(const AnyModelConfig& cfg) {
    if (std::holds_alternative<ViTConfig>(cfg)) {
        const ViTConfig& v = std::get<ViTConfig>(cfg);
        return vit_token_plan(v).counts.back();
    }
    const MViTConfig& m = std::get<MViTConfig>(cfg);
    return mvit_plan(m).blocks.back().grid_q.count();
}

Reduction compare_models(const AnyModelConfig& cfg, const AnyModelConfig& baseline) {
    if (input_of(cfg) != input_of(baseline))
        throw ArgumentError("compare: configs have different input sizes");
    Reduction red;
    red.variant_macs = audit_model(cfg).total_macs();
    red.baseline_macs = audit_model(baseline).total_macs();
    red.fraction = 1.0 - static_cast<double>(red.variant_macs) / static_cast<double>(red.baseline_macs);
    return red;
}

}  // namespace svt
