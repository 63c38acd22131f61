#include "svt/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "svt/ops.hpp"
#include "svt/rng.hpp"

namespace svt {

void TrainConfig::validate() const {
    if (optimizer != "adamw" && optimizer != "sgd")
        throw ConfigError("train: optimizer must be 'adamw' or 'sgd', got '" + optimizer + "'");
    if (lr < 0) throw ConfigError("train: lr must be >= 0");
    if (weight_decay < 0) throw ConfigError("train: weight_decay must be >= 0");
    if (steps < 1) throw ConfigError("train: steps must be >= 1");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (warmup < 0 || warmup >= steps) throw ConfigError("train: warmup must lie in [0, steps)");
    if (eval_every < 1 || log_every < 1) throw ConfigError("train: eval_every/log_every must be >= 1");
}

double lr_at(const TrainConfig& cfg, int64_t step) {
    if (cfg.warmup > 0 && step <= cfg.warmup)
        return cfg.lr * static_cast<double>(step) / static_cast<double>(cfg.warmup);
    const double t = static_cast<double>(step - cfg.warmup) / static_cast<double>(cfg.steps - cfg.warmup);
    return cfg.lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * t));
}

void write_metrics_csv(std::ostream& os, const std::vector<MetricsRow>& rows) {
    os << "step,split,loss,top1,flops_g,tokens_final\n";
    char buf[192];
    for (const MetricsRow& r : rows) {
        std::snprintf(buf, sizeof(buf), "%lld,%s,%.9g,%.9g,%.9g,%lld\n", static_cast<long long>(r.step),
                      r.split.c_str(), r.loss, r.top1, r.flops_g, static_cast<long long>(r.tokens_final));
        os << buf;
    }
}

namespace {

bool decayed(const Tensor& t) { return t.ndim() >= 2; }

}  // namespace

void AdamW::step(ParamStore& params, double lr) {
    auto& entries = params.entries();
    if (m_.empty()) {
        m_.resize(entries.size());
        v_.resize(entries.size());
        for (size_t i = 0; i < entries.size(); ++i) {
            m_[i].assign(static_cast<size_t>(entries[i].second.numel()), 0.0);
            v_[i].assign(static_cast<size_t>(entries[i].second.numel()), 0.0);
        }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (size_t i = 0; i < entries.size(); ++i) {
        Tensor& p = entries[i].second;
        auto g = p.grad();
        auto d = p.data_mut();
        const double wd = decayed(p) ? wd_ : 0.0;
        double* m = m_[i].data();
        double* v = v_[i].data();
        const int64_t n = p.numel();
#pragma omp parallel for schedule(static) if (n > (1 << 14))
        for (int64_t j = 0; j < n; ++j) {
            m[j] = b1_ * m[j] + (1.0 - b1_) * g[static_cast<size_t>(j)];
            v[j] = b2_ * v[j] + (1.0 - b2_) * g[static_cast<size_t>(j)] * g[static_cast<size_t>(j)];
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            d[static_cast<size_t>(j)] -= lr * (mhat / (std::sqrt(vhat) + eps_) + wd * d[static_cast<size_t>(j)]);
        }
    }
}

void MomentumSGD::step(ParamStore& params, double lr) {
    auto& entries = params.entries();
    if (vel_.empty()) {
        vel_.resize(entries.size());
        for (size_t i = 0; i < entries.size(); ++i)
            vel_[i].assign(static_cast<size_t>(entries[i].second.numel()), 0.0);
    }
    for (size_t i = 0; i < entries.size(); ++i) {
        Tensor& p = entries[i].second;
        auto g = p.grad();
        auto d = p.data_mut();
        const double wd = decayed(p) ? wd_ : 0.0;
        double* v = vel_[i].data();
        const int64_t n = p.numel();
#pragma omp parallel for schedule(static) if (n > (1 << 14))
        for (int64_t j = 0; j < n; ++j) {
            v[j] = mu_ * v[j] + g[static_cast<size_t>(j)];
            d[static_cast<size_t>(j)] -= lr * (v[j] + wd * d[static_cast<size_t>(j)]);
        }
    }
}

namespace {

/// Re-runs a forward pass with per-op finite checks to name the first
/// offender, then rethrows as NumericError.
[[noreturn]] void diagnose_nan(IModel& model, const Tensor& video, int64_t label) {
    set_debug_check_finite(true);
    try {
        Tensor logits = model.forward(video);
        cross_entropy_logits(reshape(logits, {1, logits.numel()}), {label});
    } catch (const NumericError& e) {
        set_debug_check_finite(false);
        throw NumericError(std::string("training aborted: ") + e.what());
    }
    set_debug_check_finite(false);
    throw NumericError("training aborted: non-finite loss (origin op not reproduced)");
}

}  // namespace

double evaluate(IModel& model, const std::vector<Clip>& clips, double* loss_out) {
    int64_t correct = 0;
    double loss_sum = 0.0;
    for (const Clip& c : clips) {
        Tensor logits = model.forward(c.video);
        auto d = logits.data();
        int64_t arg = 0;
        for (int64_t k = 1; k < logits.numel(); ++k)
            if (d[static_cast<size_t>(k)] > d[static_cast<size_t>(arg)]) arg = k;
        if (arg == c.label) ++correct;
        Tensor loss = cross_entropy_logits(reshape(logits, {1, logits.numel()}), {c.label});
        loss_sum += loss.item();
    }
    if (loss_out) *loss_out = loss_sum / static_cast<double>(clips.size());
    return static_cast<double>(correct) / static_cast<double>(clips.size());
}

TrainResult train_model(IModel& model, const Dataset& data, const TrainConfig& cfg, double flops_g,
                        int64_t tokens_final) {
    cfg.validate();
    std::unique_ptr<Optimizer> opt;
    if (cfg.optimizer == "adamw")
        opt = std::make_unique<AdamW>(cfg.weight_decay);
    else
        opt = std::make_unique<MomentumSGD>(cfg.momentum, cfg.weight_decay);

    Rng shuffle_rng = Rng::derived(cfg.seed, 0x5f17);
    std::vector<int64_t> order(data.train.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int64_t>(i);
    size_t cursor = order.size();  // force initial shuffle

    TrainResult result;
    int64_t window_correct = 0, window_count = 0;
    double window_loss = 0.0;
    int64_t window_batches = 0;

    for (int64_t step = 1; step <= cfg.steps; ++step) {
        model.params().zero_grads();
        double batch_loss = 0.0;
        for (int64_t b = 0; b < cfg.batch_size; ++b) {
            if (cursor >= order.size()) {
                for (size_t i = order.size(); i > 1; --i)
                    std::swap(order[i - 1], order[static_cast<size_t>(shuffle_rng.uniform_int(0, static_cast<int64_t>(i) - 1))]);
                cursor = 0;
            }
            const Clip& clip = data.train[static_cast<size_t>(order[cursor++])];
            Tape tape;
            Tape::Scope scope(tape);
            Tensor logits = model.forward(clip.video);
            {
                auto d = logits.data();
                int64_t arg = 0;
                for (int64_t k = 1; k < logits.numel(); ++k)
                    if (d[static_cast<size_t>(k)] > d[static_cast<size_t>(arg)]) arg = k;
                if (arg == clip.label) ++window_correct;
                ++window_count;
            }
            Tensor loss = cross_entropy_logits(reshape(logits, {1, logits.numel()}), {clip.label});
            if (!std::isfinite(loss.item())) diagnose_nan(model, clip.video, clip.label);
            batch_loss += loss.item() / static_cast<double>(cfg.batch_size);
            Tensor scaled = scale(loss, 1.0 / static_cast<double>(cfg.batch_size));
            tape.backward(scaled);
        }
        opt->step(model.params(), lr_at(cfg, step));
        window_loss += batch_loss;
        ++window_batches;

        if (step % cfg.log_every == 0 || step == cfg.steps) {
            result.metrics.push_back({step, "train", window_loss / static_cast<double>(window_batches),
                                      static_cast<double>(window_correct) / static_cast<double>(window_count),
                                      flops_g, tokens_final});
            window_correct = window_count = 0;
            window_loss = 0.0;
            window_batches = 0;
        }
        if (step % cfg.eval_every == 0 || step == cfg.steps) {
            double vloss = 0.0;
            const double vacc = evaluate(model, data.val, &vloss);
            result.metrics.push_back({step, "val", vloss, vacc, flops_g, tokens_final});
            result.final_val_top1 = vacc;
            result.final_val_loss = vloss;
        }
    }
    return result;
}

}  // namespace svt
