#pragma once

#include <functional>
#include <string>
#include <vector>

#include "svt/common.hpp"
#include "svt/tensor.hpp"

namespace svt {

/// Reverse-mode tape. Ops executed inside a Tape::Scope append one
/// adjoint closure each; backward() replays them in exact reverse
/// execution order. A tape can be consumed once between resets.
class Tape {
public:
    struct Entry {
        const char* op;
        std::function<void()> adjoint;
    };

    /// Currently active tape for this thread (nullptr outside scopes).
    static Tape* current() { return current_; }

    class Scope {
    public:
        explicit Scope(Tape& t) : prev_(current_) { current_ = &t; }
        ~Scope() { current_ = prev_; }
        Scope(const Scope&) = delete;
        Scope& operator=(const Scope&) = delete;

    private:
        Tape* prev_;
    };

    void record(const char* op, std::function<void()> adjoint) {
        entries_.push_back({op, std::move(adjoint)});
    }

    /// Seeds d(loss)/d(loss) = 1 and replays all adjoints in reverse.
    void backward(Tensor& loss) {
        if (consumed_) throw ContractError("Tape::backward called twice without reset");
        if (loss.numel() != 1) throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
        if (!loss.requires_grad())
            throw ContractError("backward: loss does not require grad (no recorded ops?)");
        loss.ensure_grad();
        loss.grad_mut()[0] += 1.0;
        for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) it->adjoint();
        consumed_ = true;
    }

    void reset() {
        entries_.clear();
        consumed_ = false;
    }

    size_t size() const { return entries_.size(); }
    bool consumed() const { return consumed_; }

private:
    static thread_local Tape* current_;

    std::vector<Entry> entries_;
    bool consumed_ = false;
};

/// When enabled, every op verifies its output is finite and throws
/// NumericError naming the first offending op. Used by the trainer to
/// diagnose NaN losses.
void set_debug_check_finite(bool enabled);
bool debug_check_finite();

}  // namespace svt
