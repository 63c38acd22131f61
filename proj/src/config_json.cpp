#include "svt/config_json.hpp"

#include <fstream>
#include <set>

namespace svt {

json load_json_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file: " + path);
    json j;
    try {
        is >> j;
    } catch (const json::parse_error& e) {
        throw ConfigError("invalid JSON in " + path + ": " + e.what());
    }
    return j;
}

namespace {

void expect_object(const json& j, const char* ctx) {
    if (!j.is_object()) throw ConfigError(std::string(ctx) + ": expected a JSON object");
}

void expect_keys(const json& j, const std::set<std::string>& allowed, const char* ctx) {
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!allowed.count(it.key()))
            throw ConfigError(std::string(ctx) + ": unknown key '" + it.key() + "'");
}

template <typename T>
T get_num(const json& j, const char* key, const char* ctx, std::optional<T> fallback = std::nullopt) {
    if (!j.contains(key)) {
        if (fallback) return *fallback;
        throw ConfigError(std::string(ctx) + ": missing key '" + key + "'");
    }
    if (!j[key].is_number()) throw ConfigError(std::string(ctx) + ": '" + key + "' must be a number");
    return j[key].get<T>();
}

std::string get_str(const json& j, const char* key, const char* ctx, std::optional<std::string> fallback = {}) {
    if (!j.contains(key)) {
        if (fallback) return *fallback;
        throw ConfigError(std::string(ctx) + ": missing key '" + key + "'");
    }
    if (!j[key].is_string()) throw ConfigError(std::string(ctx) + ": '" + key + "' must be a string");
    return j[key].get<std::string>();
}

bool get_bool(const json& j, const char* key, const char* ctx, bool fallback) {
    if (!j.contains(key)) return fallback;
    if (!j[key].is_boolean()) throw ConfigError(std::string(ctx) + ": '" + key + "' must be a boolean");
    return j[key].get<bool>();
}

GridDims get_dims3(const json& j, const char* key, const char* ctx) {
    if (!j.contains(key) || !j[key].is_array() || j[key].size() != 3)
        throw ConfigError(std::string(ctx) + ": '" + key + "' must be an array of 3 integers");
    return GridDims{j[key][0].get<int64_t>(), j[key][1].get<int64_t>(), j[key][2].get<int64_t>()};
}

std::array<int64_t, 3> get_arr3(const json& j, const char* key, const char* ctx, std::array<int64_t, 3> fallback) {
    if (!j.contains(key)) return fallback;
    if (!j[key].is_array() || j[key].size() != 3)
        throw ConfigError(std::string(ctx) + ": '" + key + "' must be an array of 3 integers");
    return {j[key][0].get<int64_t>(), j[key][1].get<int64_t>(), j[key][2].get<int64_t>()};
}

std::array<int64_t, 4> get_arr4(const json& j, const char* key, const char* ctx) {
    if (!j.contains(key) || !j[key].is_array() || j[key].size() != 4)
        throw ConfigError(std::string(ctx) + ": '" + key + "' must be an array of 4 integers");
    return {j[key][0].get<int64_t>(), j[key][1].get<int64_t>(), j[key][2].get<int64_t>(),
            j[key][3].get<int64_t>()};
}

}  // namespace

SPMConfig parse_spm(const json& j, double default_theta) {
    expect_object(j, "spm");
    expect_keys(j,
                {"prototypes", "theta", "window", "keep_top", "variant", "groups", "heads", "output_projection"},
                "spm");
    SPMConfig cfg;
    cfg.prototypes = get_num<int64_t>(j, "prototypes", "spm");
    cfg.theta = get_num<double>(j, "theta", "spm", default_theta);
    if (j.contains("window")) {
        if (j["window"].is_string()) {
            if (j["window"].get<std::string>() != "global")
                throw ConfigError("spm: 'window' must be [t,h,w] or \"global\"");
            cfg.window.reset();
        } else {
            cfg.window = get_dims3(j, "window", "spm");
        }
    }
    cfg.keep_top = get_num<int64_t>(j, "keep_top", "spm", int64_t{0});
    const std::string variant = get_str(j, "variant", "spm", std::string("elitism"));
    if (variant == "elitism")
        cfg.variant = SpmVariant::Elitism;
    else if (variant == "neighbor")
        cfg.variant = SpmVariant::Neighbor;
    else
        throw ConfigError("spm: variant must be 'elitism' or 'neighbor'");
    cfg.groups_k = get_num<int64_t>(j, "groups", "spm", int64_t{1});
    cfg.heads = get_num<int64_t>(j, "heads", "spm", int64_t{1});
    cfg.output_projection = get_bool(j, "output_projection", "spm", false);
    return cfg;
}

ViTConfig parse_vit(const json& j) {
    expect_object(j, "model");
    expect_keys(j,
                {"kind", "depth", "embed_dim", "heads", "mlp_ratio", "patch", "input", "num_classes",
                 "spm_schedule"},
                "vit model");
    ViTConfig cfg;
    cfg.depth = get_num<int64_t>(j, "depth", "vit model");
    cfg.embed_dim = get_num<int64_t>(j, "embed_dim", "vit model");
    cfg.heads = get_num<int64_t>(j, "heads", "vit model");
    cfg.mlp_ratio = get_num<double>(j, "mlp_ratio", "vit model", 4.0);
    cfg.patch = get_dims3(j, "patch", "vit model");
    cfg.input = get_arr4(j, "input", "vit model");
    cfg.num_classes = get_num<int64_t>(j, "num_classes", "vit model");
    if (j.contains("spm_schedule")) {
        if (!j["spm_schedule"].is_array()) throw ConfigError("vit model: 'spm_schedule' must be an array");
        for (const json& e : j["spm_schedule"]) {
            expect_object(e, "spm_schedule entry");
            expect_keys(e, {"layer", "kind", "spm", "window"}, "spm_schedule entry");
            SpmScheduleEntry entry;
            entry.layer = get_num<int64_t>(e, "layer", "spm_schedule entry");
            const std::string kind = get_str(e, "kind", "spm_schedule entry", std::string("spm"));
            if (kind == "spm") {
                entry.kind = ReduceKind::Spm;
                if (!e.contains("spm")) throw ConfigError("spm_schedule entry: missing 'spm' block");
                entry.spm = parse_spm(e["spm"], 0.7);  // single-scale default threshold
            } else if (kind == "avgpool" || kind == "maxpool") {
                entry.kind = kind == "avgpool" ? ReduceKind::AvgPool : ReduceKind::MaxPool;
                entry.pool_window = get_dims3(e, "window", "spm_schedule entry");
            } else {
                throw ConfigError("spm_schedule entry: kind must be 'spm', 'avgpool' or 'maxpool'");
            }
            cfg.schedule.push_back(entry);
        }
    }
    cfg.validate();
    return cfg;
}

MViTConfig parse_mvit(const json& j) {
    expect_object(j, "model");
    expect_keys(j,
                {"kind", "input", "stem", "stages", "mlp_ratio", "attn_kernel", "semantic_period", "spm",
                 "num_classes"},
                "mvit model");
    MViTConfig cfg;
    cfg.input = get_arr4(j, "input", "mvit model");
    if (!j.contains("stem")) throw ConfigError("mvit model: missing 'stem'");
    expect_object(j["stem"], "mvit stem");
    expect_keys(j["stem"], {"kernel", "stride"}, "mvit stem");
    cfg.stem_kernel = get_dims3(j["stem"], "kernel", "mvit stem");
    cfg.stem_stride = get_dims3(j["stem"], "stride", "mvit stem");
    if (!j.contains("stages") || !j["stages"].is_array() || j["stages"].empty())
        throw ConfigError("mvit model: 'stages' must be a non-empty array");
    for (const json& s : j["stages"]) {
        expect_object(s, "mvit stage");
        expect_keys(s, {"blocks", "channels", "heads", "q_stride", "kv_stride"}, "mvit stage");
        MViTStage stage;
        stage.blocks = get_num<int64_t>(s, "blocks", "mvit stage");
        stage.channels = get_num<int64_t>(s, "channels", "mvit stage");
        stage.heads = get_num<int64_t>(s, "heads", "mvit stage");
        stage.q_stride = get_arr3(s, "q_stride", "mvit stage", {1, 1, 1});
        stage.kv_stride = get_arr3(s, "kv_stride", "mvit stage", {1, 1, 1});
        cfg.stages.push_back(stage);
    }
    cfg.mlp_ratio = get_num<double>(j, "mlp_ratio", "mvit model", 4.0);
    if (j.contains("attn_kernel")) cfg.attn_kernel = get_dims3(j, "attn_kernel", "mvit model");
    cfg.semantic_period = get_num<int64_t>(j, "semantic_period", "mvit model", int64_t{0});
    if (cfg.semantic_period > 0) {
        if (!j.contains("spm")) throw ConfigError("mvit model: semantic_period set but 'spm' block missing");
        cfg.spm = parse_spm(j["spm"], 0.5);  // multi-scale default threshold
    } else if (j.contains("spm")) {
        throw ConfigError("mvit model: 'spm' block given but semantic_period is 0");
    }
    cfg.num_classes = get_num<int64_t>(j, "num_classes", "mvit model");
    cfg.validate();
    return cfg;
}

AnyModelConfig parse_model(const json& j) {
    expect_object(j, "model");
    const std::string kind = get_str(j, "kind", "model");
    if (kind == "vit") return parse_vit(j);
    if (kind == "mvit") return parse_mvit(j);
    throw ConfigError("model: kind must be 'vit' or 'mvit', got '" + kind + "'");
}

SyntheticVideoSpec parse_dataset(const json& j) {
    expect_object(j, "dataset");
    expect_keys(j,
                {"frames", "height", "width", "num_classes", "sprite_fraction", "noise_sigma", "seed",
                 "train_clips", "val_clips"},
                "dataset");
    SyntheticVideoSpec spec;
    spec.frames = get_num<int64_t>(j, "frames", "dataset");
    spec.height = get_num<int64_t>(j, "height", "dataset");
    spec.width = get_num<int64_t>(j, "width", "dataset");
    spec.num_classes = get_num<int64_t>(j, "num_classes", "dataset");
    spec.sprite_fraction = get_num<double>(j, "sprite_fraction", "dataset", 0.1);
    spec.noise_sigma = get_num<double>(j, "noise_sigma", "dataset", 0.02);
    spec.seed = get_num<uint64_t>(j, "seed", "dataset", uint64_t{1});
    spec.train_clips = get_num<int64_t>(j, "train_clips", "dataset");
    spec.val_clips = get_num<int64_t>(j, "val_clips", "dataset");
    spec.validate();
    return spec;
}

TrainConfig parse_train(const json& j) {
    expect_object(j, "train");
    expect_keys(j,
                {"optimizer", "lr", "weight_decay", "momentum", "steps", "batch_size", "warmup", "eval_every",
                 "log_every", "seed"},
                "train");
    TrainConfig cfg;
    cfg.optimizer = get_str(j, "optimizer", "train", std::string("adamw"));
    cfg.lr = get_num<double>(j, "lr", "train", 3e-3);
    cfg.weight_decay = get_num<double>(j, "weight_decay", "train", 0.02);
    cfg.momentum = get_num<double>(j, "momentum", "train", 0.9);
    cfg.steps = get_num<int64_t>(j, "steps", "train");
    cfg.batch_size = get_num<int64_t>(j, "batch_size", "train", int64_t{8});
    cfg.warmup = get_num<int64_t>(j, "warmup", "train", int64_t{0});
    cfg.eval_every = get_num<int64_t>(j, "eval_every", "train", int64_t{200});
    cfg.log_every = get_num<int64_t>(j, "log_every", "train", int64_t{20});
    cfg.seed = get_num<uint64_t>(j, "seed", "train", uint64_t{1});
    cfg.validate();
    return cfg;
}

RunDocument parse_run(const json& j) {
    expect_object(j, "run");
    expect_keys(j, {"model", "dataset", "train"}, "run");
    if (!j.contains("model") || !j.contains("dataset") || !j.contains("train"))
        throw ConfigError("run: needs 'model', 'dataset' and 'train' blocks");
    RunDocument doc{parse_model(j["model"]), parse_dataset(j["dataset"]), parse_train(j["train"])};
    const auto in = input_of(doc.model);
    if (in[0] != doc.dataset.frames || in[1] != doc.dataset.height || in[2] != doc.dataset.width || in[3] != 1)
        throw ConfigError("run: model input " + std::to_string(in[0]) + "x" + std::to_string(in[1]) + "x" +
                          std::to_string(in[2]) + " does not match dataset clips");
    if (std::holds_alternative<ViTConfig>(doc.model)) {
        if (std::get<ViTConfig>(doc.model).num_classes != doc.dataset.num_classes)
            throw ConfigError("run: model num_classes does not match dataset");
    } else if (std::get<MViTConfig>(doc.model).num_classes != doc.dataset.num_classes) {
        throw ConfigError("run: model num_classes does not match dataset");
    }
    return doc;
}

SweepDocument parse_sweep(const json& j) {
    expect_object(j, "sweep");
    expect_keys(j, {"dataset", "train", "runs"}, "sweep");
    if (!j.contains("dataset") || !j.contains("train") || !j.contains("runs"))
        throw ConfigError("sweep: needs 'dataset', 'train' and 'runs'");
    SweepDocument doc;
    doc.dataset = parse_dataset(j["dataset"]);
    doc.train = parse_train(j["train"]);
    if (!j["runs"].is_array() || j["runs"].empty()) throw ConfigError("sweep: 'runs' must be a non-empty array");
    std::set<std::string> names;
    for (const json& r : j["runs"]) {
        expect_object(r, "sweep run");
        expect_keys(r, {"name", "model"}, "sweep run");
        SweepEntry e;
        e.name = get_str(r, "name", "sweep run");
        if (!names.insert(e.name).second) throw ConfigError("sweep: duplicate run name '" + e.name + "'");
        if (!r.contains("model")) throw ConfigError("sweep run: missing 'model'");
        e.model = parse_model(r["model"]);
        doc.runs.push_back(std::move(e));
    }
    return doc;
}

}  // namespace svt
