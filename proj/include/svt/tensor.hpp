#pragma once

#include <memory>
#include <span>
#include <vector>

#include "svt/common.hpp"
#include "svt/rng.hpp"

namespace svt {

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // allocated lazily, same length as data
    bool requires_grad = false;
};

/// Dense row-major array of 64-bit floats with an optional gradient
/// buffer. Handles share the underlying storage (shallow copies), which
/// is what the tape records.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape) {
        Tensor t;
        t.impl_ = std::make_shared<TensorImpl>();
        t.impl_->shape = std::move(shape);
        t.impl_->data.assign(static_cast<size_t>(numel_of(t.impl_->shape)), 0.0);
        return t;
    }

    static Tensor full(Shape shape, double value) {
        Tensor t = zeros(std::move(shape));
        for (auto& v : t.impl_->data) v = value;
        return t;
    }

    static Tensor scalar(double value) { return full({1}, value); }

    static Tensor from(Shape shape, std::vector<double> values) {
        if (numel_of(shape) != static_cast<int64_t>(values.size()))
            throw ShapeError("Tensor::from: " + shape_str(shape) + " does not hold " +
                             std::to_string(values.size()) + " values");
        Tensor t;
        t.impl_ = std::make_shared<TensorImpl>();
        t.impl_->shape = std::move(shape);
        t.impl_->data = std::move(values);
        return t;
    }

    static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0, double mean = 0.0) {
        Tensor t = zeros(std::move(shape));
        for (auto& v : t.impl_->data) v = rng.normal(mean, stddev);
        return t;
    }

    bool defined() const { return static_cast<bool>(impl_); }
    const Shape& shape() const { return impl_->shape; }
    int ndim() const { return static_cast<int>(impl_->shape.size()); }
    int64_t dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
    int64_t numel() const { return static_cast<int64_t>(impl_->data.size()); }

    std::span<const double> data() const { return impl_->data; }
    std::span<double> data_mut() { return impl_->data; }
    double at(int64_t i) const { return impl_->data[static_cast<size_t>(i)]; }

    double item() const {
        if (numel() != 1) throw ShapeError("item(): tensor has " + std::to_string(numel()) + " elements");
        return impl_->data[0];
    }

    bool requires_grad() const { return impl_ && impl_->requires_grad; }
    Tensor& set_requires_grad(bool v) {
        impl_->requires_grad = v;
        if (v) ensure_grad();
        return *this;
    }

    void ensure_grad() {
        if (impl_->grad.size() != impl_->data.size()) impl_->grad.assign(impl_->data.size(), 0.0);
    }

    void zero_grad() {
        if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
    }

    std::span<const double> grad() const { return impl_->grad; }
    std::span<double> grad_mut() { return impl_->grad; }

    const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

private:
    std::shared_ptr<TensorImpl> impl_;
};

/// Boolean companion array (masks). Kept separate from Tensor so that
/// masking never flows through arithmetic by accident.
struct BoolArray {
    Shape shape;
    std::vector<uint8_t> v;

    static BoolArray filled(Shape s, bool value) {
        BoolArray b;
        b.shape = std::move(s);
        b.v.assign(static_cast<size_t>(numel_of(b.shape)), value ? 1 : 0);
        return b;
    }
    int64_t numel() const { return static_cast<int64_t>(v.size()); }
    bool at(int64_t i) const { return v[static_cast<size_t>(i)] != 0; }
    void set(int64_t i, bool x) { v[static_cast<size_t>(i)] = x ? 1 : 0; }
};

/// Integer index array (top-k results and friends).
struct IndexArray {
    Shape shape;
    std::vector<int64_t> v;
};

}  // namespace svt
