#pragma once

#include <memory>

#include "svt/config_json.hpp"

namespace svt {

std::unique_ptr<IModel> build_model(const AnyModelConfig& cfg, uint64_t seed);

struct TrainOutcome {
    TrainResult result;
    double flops_g = 0.0;
    int64_t tokens_final = 0;
};

/// Audits the config (FLOP figures always come from the auditor) and
/// runs the training loop.
TrainOutcome run_training(IModel& model, const AnyModelConfig& cfg, const Dataset& data,
                          const TrainConfig& tcfg);

}  // namespace svt
