#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "svt/params.hpp"
#include "svt/synth.hpp"

namespace svt {

struct TrainConfig {
    std::string optimizer = "adamw";  // "adamw" or "sgd"
    double lr = 3e-3;
    double weight_decay = 0.02;
    double momentum = 0.9;  // sgd only
    int64_t steps = 600;
    int64_t batch_size = 8;
    int64_t warmup = 50;
    int64_t eval_every = 200;
    int64_t log_every = 20;
    uint64_t seed = 1;

    void validate() const;
};

/// Fixed CSV schema: step,split,loss,top1,flops_g,tokens_final.
struct MetricsRow {
    int64_t step = 0;
    std::string split;
    double loss = 0.0;
    double top1 = 0.0;
    double flops_g = 0.0;
    int64_t tokens_final = 0;
};

void write_metrics_csv(std::ostream& os, const std::vector<MetricsRow>& rows);

/// Cosine schedule with linear warmup, decaying to zero at `steps`.
double lr_at(const TrainConfig& cfg, int64_t step);

class Optimizer {
public:
    virtual ~Optimizer() = default;
    virtual void step(ParamStore& params, double lr) = 0;
};

/// Adam with decoupled weight decay; decay applies to >=2-D tensors only.
class AdamW : public Optimizer {
public:
    explicit AdamW(double weight_decay, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {}
    void step(ParamStore& params, double lr) override;

private:
    double wd_, b1_, b2_, eps_;
    int64_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

class MomentumSGD : public Optimizer {
public:
    MomentumSGD(double momentum, double weight_decay) : mu_(momentum), wd_(weight_decay) {}
    void step(ParamStore& params, double lr) override;

private:
    double mu_, wd_;
    std::vector<std::vector<double>> vel_;
};

struct TrainResult {
    std::vector<MetricsRow> metrics;
    double final_val_top1 = 0.0;
    double final_val_loss = 0.0;
};

/// Deterministic training loop: serial sample order inside a batch,
/// gradient accumulation in that order, one optimizer step per batch.
/// Aborts with NumericError naming the first non-finite op on NaN loss.
TrainResult train_model(IModel& model, const Dataset& data, const TrainConfig& cfg, double flops_g,
                        int64_t tokens_final);

double evaluate(IModel& model, const std::vector<Clip>& clips, double* loss_out = nullptr);

}  // namespace svt
