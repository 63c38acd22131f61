#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "svt/tensor.hpp"

namespace svt {

/// Ordered collection of named trainable tensors. Registration order is
/// the canonical order for checkpoints and optimizer state.
class ParamStore {
public:
    Tensor& add(const std::string& name, Tensor t) {
        if (index_.count(name)) throw ArgumentError("ParamStore: duplicate parameter " + name);
        t.set_requires_grad(true);
        index_[name] = entries_.size();
        entries_.emplace_back(name, std::move(t));
        return entries_.back().second;
    }

    Tensor& add_randn(const std::string& name, Shape shape, Rng& rng, double stddev) {
        return add(name, Tensor::randn(std::move(shape), rng, stddev));
    }

    Tensor& add_const(const std::string& name, Shape shape, double value) {
        return add(name, Tensor::full(std::move(shape), value));
    }

    /// Xavier-normal init: std = sqrt(2 / (fan_in + fan_out)).
    Tensor& add_xavier(const std::string& name, int64_t fan_in, int64_t fan_out, Rng& rng) {
        const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
        return add_randn(name, {fan_in, fan_out}, rng, stddev);
    }

    Tensor& get(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw ArgumentError("ParamStore: unknown parameter " + name);
        return entries_[it->second].second;
    }

    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    std::vector<std::pair<std::string, Tensor>>& entries() { return entries_; }
    const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }

    void zero_grads() {
        for (auto& [name, t] : entries_) t.zero_grad();
    }

    int64_t total_params() const {
        int64_t n = 0;
        for (const auto& [name, t] : entries_) n += t.numel();
        return n;
    }

private:
    std::vector<std::pair<std::string, Tensor>> entries_;
    std::unordered_map<std::string, size_t> index_;
};

/// Minimal model interface the trainer and harness work against.
class IModel {
public:
    virtual ~IModel() = default;
    virtual Tensor forward(const Tensor& video) = 0;
    virtual ParamStore& params() = 0;
    virtual int64_t num_classes() const = 0;
};

}  // namespace svt
