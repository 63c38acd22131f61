#pragma once

#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "svt/ops.hpp"
#include "svt/rng.hpp"

namespace svt::testutil {

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
    REQUIRE(a.size() == b.size());
    double m = 0.0;
    for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

inline double max_abs_diff(const Tensor& a, const std::vector<double>& b) {
    return max_abs_diff(a.data(), std::span<const double>(b));
}

inline bool close_rel(double analytic, double numeric, double tol) {
    return std::abs(analytic - numeric) <= tol * std::max({1.0, std::abs(analytic), std::abs(numeric)});
}

struct GradCheckOpts {
    double tol = 1e-4;
    double h = 1e-5;
    int64_t max_coords = 0;  // per leaf; 0 = every coordinate
};

/// Central finite-difference check of d(loss)/d(leaf) for every leaf.
/// `forward_loss` must recompute the scalar loss from the leaves' current
/// values; it is re-evaluated with perturbed leaf entries.
inline void check_gradients(const std::function<Tensor()>& forward_loss, std::vector<Tensor> leaves,
                            Rng& rng, GradCheckOpts opts = {}) {
    for (Tensor& leaf : leaves) {
        leaf.set_requires_grad(true);
        leaf.zero_grad();
    }
    Tape tape;
    {
        Tape::Scope scope(tape);
        Tensor loss = forward_loss();
        tape.backward(loss);
    }
    std::vector<std::vector<double>> analytic;
    for (Tensor& leaf : leaves) analytic.emplace_back(leaf.grad().begin(), leaf.grad().end());

    for (size_t li = 0; li < leaves.size(); ++li) {
        Tensor& leaf = leaves[li];
        const int64_t n = leaf.numel();
        std::vector<int64_t> coords;
        if (opts.max_coords > 0 && n > opts.max_coords) {
            for (int64_t i = 0; i < opts.max_coords; ++i) coords.push_back(rng.uniform_int(0, n - 1));
        } else {
            for (int64_t i = 0; i < n; ++i) coords.push_back(i);
        }
        for (int64_t i : coords) {
            auto d = leaf.data_mut();
            const double orig = d[static_cast<size_t>(i)];
            d[static_cast<size_t>(i)] = orig + opts.h;
            const double lp = forward_loss().item();
            d[static_cast<size_t>(i)] = orig - opts.h;
            const double lm = forward_loss().item();
            d[static_cast<size_t>(i)] = orig;
            const double numeric = (lp - lm) / (2.0 * opts.h);
            const double a = analytic[li][static_cast<size_t>(i)];
            if (!close_rel(a, numeric, opts.tol)) {
                CAPTURE(li);
                CAPTURE(i);
                CAPTURE(a);
                CAPTURE(numeric);
                REQUIRE(close_rel(a, numeric, opts.tol));
            }
        }
    }
}

/// Fixed random projection of a tensor to a scalar; the projection
/// weights must be created once and reused across FD evaluations.
inline Tensor project_to_scalar(const Tensor& out, const Tensor& weights) {
    return reshape(linear(reshape(out, {1, out.numel()}), weights), {1});
}

inline Tensor projection_for(int64_t numel, Rng& rng) { return Tensor::randn({numel, 1}, rng); }

}  // namespace svt::testutil
