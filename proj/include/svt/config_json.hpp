#pragma once

#include <string>

#include <json.hpp>

#include "svt/flops.hpp"
#include "svt/synth.hpp"
#include "svt/train.hpp"

namespace svt {

using json = nlohmann::json;

/// All parsers are strict: unknown keys, wrong types, and out-of-range
/// values raise ConfigError (CLI exit code 2). The shipped schema files
/// under schemas/ document the accepted documents.

json load_json_file(const std::string& path);

SPMConfig parse_spm(const json& j, double default_theta);
ViTConfig parse_vit(const json& j);
MViTConfig parse_mvit(const json& j);
AnyModelConfig parse_model(const json& j);

SyntheticVideoSpec parse_dataset(const json& j);
TrainConfig parse_train(const json& j);

/// A full run document: model + dataset + train.
struct RunDocument {
    AnyModelConfig model;
    SyntheticVideoSpec dataset;
    TrainConfig train;
};

RunDocument parse_run(const json& j);

struct SweepEntry {
    std::string name;
    AnyModelConfig model;
};

struct SweepDocument {
    SyntheticVideoSpec dataset;
    TrainConfig train;
    std::vector<SweepEntry> runs;
};

SweepDocument parse_sweep(const json& j);

}  // namespace svt
