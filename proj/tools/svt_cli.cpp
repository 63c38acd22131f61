#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "svt/checkpoint.hpp"
#include "svt/exports.hpp"
#include "svt/harness.hpp"

namespace fs = std::filesystem;
using namespace svt;

namespace {

struct CommonOpts {
    std::string config;
    std::string out = ".";
    uint64_t seed = 0;
    bool seed_set = false;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
    cmd->add_option("--config", o.config, "JSON config document")->required();
    cmd->add_option("--out", o.out, "output directory");
    cmd->add_option("--seed", o.seed, "seed override")->each([&](const std::string&) { o.seed_set = true; });
}

uint64_t run_seed(const CommonOpts& o, const TrainConfig& t) { return o.seed_set ? o.seed : t.seed; }

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw ArgumentError("cannot create output directory " + dir);
}

void write_file(const std::string& path, const std::string& contents) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ArgumentError("cannot open " + path + " for writing");
    os << contents;
}

std::pair<int64_t, int64_t> parse_views(const std::string& views) {
    const auto x = views.find('x');
    if (x == std::string::npos) throw ArgumentError("--views must look like 3x7");
    try {
        return {std::stoll(views.substr(0, x)), std::stoll(views.substr(x + 1))};
    } catch (const std::exception&) {
        throw ArgumentError("--views must look like 3x7");
    }
}

int cmd_generate(const CommonOpts& o) {
    SyntheticVideoSpec spec = parse_dataset(load_json_file(o.config));
    if (o.seed_set) spec.seed = o.seed;
    Dataset data = generate_dataset(spec);
    ensure_dir(o.out);
    write_dataset_file(data, o.out + "/dataset.bin");
    std::cout << "wrote " << data.train.size() << " train / " << data.val.size() << " val clips to " << o.out
              << "/dataset.bin\n";
    return 0;
}

int cmd_train(const CommonOpts& o) {
    RunDocument doc = parse_run(load_json_file(o.config));
    const uint64_t seed = run_seed(o, doc.train);
    doc.train.seed = seed;
    Dataset data = generate_dataset(doc.dataset);
    auto model = build_model(doc.model, seed);
    TrainOutcome out = run_training(*model, doc.model, data, doc.train);
    ensure_dir(o.out);
    {
        std::ofstream os(o.out + "/metrics.csv", std::ios::binary);
        write_metrics_csv(os, out.result.metrics);
    }
    save_checkpoint(model->params(), o.out + "/checkpoint.bin");
    std::cout << "final val top1 " << out.result.final_val_top1 << ", loss " << out.result.final_val_loss
              << ", " << out.flops_g << " GFLOPs/clip, " << out.tokens_final << " final tokens\n";
    return 0;
}

int cmd_eval(const CommonOpts& o, const std::string& ckpt) {
    RunDocument doc = parse_run(load_json_file(o.config));
    Dataset data = generate_dataset(doc.dataset);
    auto model = build_model(doc.model, run_seed(o, doc.train));
    load_checkpoint(model->params(), ckpt);
    double loss = 0.0;
    const double acc = evaluate(*model, data.val, &loss);
    std::cout << "val top1 " << acc << ", loss " << loss << "\n";
    return 0;
}

int cmd_audit(const CommonOpts& o, const std::string& baseline, const std::string& views, bool csv) {
    AnyModelConfig cfg = parse_model(load_json_file(o.config));
    FlopReport rep = audit_model(cfg);
    rep.model_name = fs::path(o.config).stem().string();
    if (!views.empty()) std::tie(rep.views_space, rep.views_time) = parse_views(views);
    rep.write_text(std::cout);
    if (!baseline.empty()) {
        AnyModelConfig base = parse_model(load_json_file(baseline));
        const Reduction red = compare_models(cfg, base);
        char buf[160];
        std::snprintf(buf, sizeof(buf), "baseline %.2f GFLOPs -> %.2f GFLOPs, reduction %.1f%%\n",
                      static_cast<double>(red.baseline_macs) / 1e9,
                      static_cast<double>(red.variant_macs) / 1e9, red.fraction * 100.0);
        std::cout << buf;
    }
    if (csv) {
        ensure_dir(o.out);
        std::ofstream os(o.out + "/flops.csv", std::ios::binary);
        rep.write_csv(os);
        std::cout << "wrote " << o.out << "/flops.csv\n";
    }
    return 0;
}

int cmd_ablate(const CommonOpts& o) {
    SweepDocument sweep = parse_sweep(load_json_file(o.config));
    const uint64_t seed = o.seed_set ? o.seed : sweep.train.seed;
    sweep.train.seed = seed;

    // fail fast: validate and audit every config before any training
    struct Planned {
        const SweepEntry* entry;
        double flops_g;
        int64_t tokens_final;
        uint64_t params;
    };
    std::vector<Planned> planned;
    for (const SweepEntry& e : sweep.runs) {
        const auto in = input_of(e.model);
        if (in[0] != sweep.dataset.frames || in[1] != sweep.dataset.height || in[2] != sweep.dataset.width)
            throw ConfigError("sweep run '" + e.name + "': model input does not match dataset");
        FlopReport rep = audit_model(e.model);
        planned.push_back({&e, rep.gflops(), final_token_count(e.model), rep.total_params()});
    }

    Dataset data = generate_dataset(sweep.dataset);
    ensure_dir(o.out);
    std::ostringstream results;
    results << "name,top1,loss,flops_g,tokens_final,params\n";
    for (const Planned& p : planned) {
        auto model = build_model(p.entry->model, seed);
        TrainResult res = train_model(*model, data, sweep.train, p.flops_g, p.tokens_final);
        {
            std::ofstream os(o.out + "/metrics_" + p.entry->name + ".csv", std::ios::binary);
            write_metrics_csv(os, res.metrics);
        }
        char buf[224];
        std::snprintf(buf, sizeof(buf), "%s,%.9g,%.9g,%.9g,%lld,%llu\n", p.entry->name.c_str(),
                      res.final_val_top1, res.final_val_loss, p.flops_g,
                      static_cast<long long>(p.tokens_final), static_cast<unsigned long long>(p.params));
        results << buf;
        std::cout << p.entry->name << ": top1 " << res.final_val_top1 << ", " << p.flops_g << " GFLOPs\n";
    }
    write_file(o.out + "/results.csv", results.str());
    return 0;
}

int cmd_export_maps(const CommonOpts& o, const std::string& ckpt, int64_t layer, int64_t clip_idx,
                    const std::string& split, const std::string& kind) {
    RunDocument doc = parse_run(load_json_file(o.config));
    Dataset data = generate_dataset(doc.dataset);
    const auto& clips = split == "train" ? data.train : data.val;
    if (clip_idx < 0 || clip_idx >= static_cast<int64_t>(clips.size()))
        throw ArgumentError("--clip index out of range");
    const Tensor& clip = clips[static_cast<size_t>(clip_idx)].video;
    ensure_dir(o.out);

    auto model = build_model(doc.model, run_seed(o, doc.train));
    if (!ckpt.empty()) load_checkpoint(model->params(), ckpt);

    std::vector<std::string> written;
    if (std::holds_alternative<ViTConfig>(doc.model)) {
        auto* vit = dynamic_cast<ViTModel*>(model.get());
        if (kind == "scores" || kind == "both") {
            auto p = export_score_heatmaps(*vit, clip, layer, o.out);
            written.insert(written.end(), p.begin(), p.end());
        }
        if (kind == "membership" || kind == "both") {
            auto p = export_pool_membership(*vit, clip, layer, o.out);
            written.insert(written.end(), p.begin(), p.end());
        }
    } else {
        auto* mvit = dynamic_cast<MViTModel*>(model.get());
        if (kind == "scores" || kind == "both") {
            auto p = export_score_heatmaps_mvit(*mvit, clip, layer, o.out);
            written.insert(written.end(), p.begin(), p.end());
        }
        if (kind == "membership" || kind == "both") {
            auto p = export_pool_membership_mvit(*mvit, clip, layer, o.out);
            written.insert(written.end(), p.begin(), p.end());
        }
    }
    std::cout << "wrote " << written.size() << " images to " << o.out << "\n";
    return 0;
}

int cmd_export_embeddings(const CommonOpts& o, const std::string& ckpt, const std::string& layers_str,
                          int64_t clips_n, const std::string& split) {
    RunDocument doc = parse_run(load_json_file(o.config));
    if (!std::holds_alternative<ViTConfig>(doc.model))
        throw ArgumentError("export-embeddings supports single-scale (vit) models");
    Dataset data = generate_dataset(doc.dataset);
    const auto& pool = split == "train" ? data.train : data.val;
    if (clips_n < 1 || clips_n > static_cast<int64_t>(pool.size()))
        throw ArgumentError("--clips out of range");
    std::vector<Clip> clips(pool.begin(), pool.begin() + clips_n);

    std::vector<int64_t> layers;
    std::stringstream ss(layers_str);
    std::string tok;
    while (std::getline(ss, tok, ',')) layers.push_back(std::stoll(tok));
    if (layers.empty()) throw ArgumentError("--layers must list at least one layer");

    auto model = build_model(doc.model, run_seed(o, doc.train));
    if (!ckpt.empty()) load_checkpoint(model->params(), ckpt);
    auto* vit = dynamic_cast<ViTModel*>(model.get());

    ensure_dir(o.out);
    std::ofstream os(o.out + "/embeddings.csv", std::ios::binary);
    export_token_embeddings(*vit, clips, layers, os);
    std::cout << "wrote " << o.out << "/embeddings.csv\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"supertoken video transformer toolkit"};
    app.require_subcommand(1);

    CommonOpts gen_o, train_o, eval_o, audit_o, ablate_o, maps_o, emb_o;
    std::string eval_ckpt, audit_baseline, audit_views, maps_ckpt, emb_ckpt;
    std::string maps_split = "val", emb_split = "val", maps_kind = "both", emb_layers;
    int64_t maps_layer = 0, maps_clip = 0, emb_clips = 1;
    bool audit_csv = false;

    add_common(app.add_subcommand("generate", "generate a synthetic dataset"), gen_o);
    add_common(app.add_subcommand("train", "train a model on the synthetic task"), train_o);
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
    add_common(eval_cmd, eval_o);
    eval_cmd->add_option("--ckpt", eval_ckpt, "checkpoint file")->required();
    auto* audit_cmd = app.add_subcommand("audit", "analytical FLOP/parameter audit");
    add_common(audit_cmd, audit_o);
    audit_cmd->add_option("--baseline", audit_baseline, "baseline model config for comparison");
    audit_cmd->add_option("--views", audit_views, "view multiplier TxS, e.g. 3x7");
    audit_cmd->add_flag("--csv", audit_csv, "also write per-layer ledger CSV to --out");
    add_common(app.add_subcommand("ablate", "run a config sweep"), ablate_o);
    auto* maps_cmd = app.add_subcommand("export-maps", "score heatmaps / pool membership images");
    add_common(maps_cmd, maps_o);
    maps_cmd->add_option("--ckpt", maps_ckpt, "checkpoint file");
    maps_cmd->add_option("--layer", maps_layer, "1-based layer (vit) or block (mvit) index")->required();
    maps_cmd->add_option("--clip", maps_clip, "clip index");
    maps_cmd->add_option("--split", maps_split, "train|val");
    maps_cmd->add_option("--kind", maps_kind, "scores|membership|both");
    auto* emb_cmd = app.add_subcommand("export-embeddings", "token embeddings CSV");
    add_common(emb_cmd, emb_o);
    emb_cmd->add_option("--ckpt", emb_ckpt, "checkpoint file");
    emb_cmd->add_option("--layers", emb_layers, "comma-separated 1-based layers")->required();
    emb_cmd->add_option("--clips", emb_clips, "number of clips from the split");
    emb_cmd->add_option("--split", emb_split, "train|val");

    try {
        app.parse(argc, argv);
        if (app.got_subcommand("generate")) return cmd_generate(gen_o);
        if (app.got_subcommand("train")) return cmd_train(train_o);
        if (app.got_subcommand("eval")) return cmd_eval(eval_o, eval_ckpt);
        if (app.got_subcommand("audit")) return cmd_audit(audit_o, audit_baseline, audit_views, audit_csv);
        if (app.got_subcommand("ablate")) return cmd_ablate(ablate_o);
        if (app.got_subcommand("export-maps"))
            return cmd_export_maps(maps_o, maps_ckpt, maps_layer, maps_clip, maps_split, maps_kind);
        if (app.got_subcommand("export-embeddings"))
            return cmd_export_embeddings(emb_o, emb_ckpt, emb_layers, emb_clips, emb_split);
        return 1;
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const ArgumentError& e) {
        std::cerr << "argument error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numerical abort: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
