#include "svt/harness.hpp"

namespace svt {

std::unique_ptr<IModel> build_model(const AnyModelConfig& cfg, uint64_t seed) {
    if (std::holds_alternative<ViTConfig>(cfg))
        return std::make_unique<ViTModel>(std::get<ViTConfig>(cfg), seed);
    return std::make_unique<MViTModel>(std::get<MViTConfig>(cfg), seed);
}

TrainOutcome run_training(IModel& model, const AnyModelConfig& cfg, const Dataset& data,
                          const TrainConfig& tcfg) {
    TrainOutcome out;
    const FlopReport report = audit_model(cfg);
    out.flops_g = report.gflops();
    out.tokens_final = final_token_count(cfg);
    out.result = train_model(model, data, tcfg, out.flops_g, out.tokens_final);
    return out;
}

}  // namespace svt
