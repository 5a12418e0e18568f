#pragma once

#include <cstring>
#include <functional>
#include <memory>
#include <type_traits>
#include <utility>
#include <vector>

#include "fsloc/rng.hpp"
#include "fsloc/shape.hpp"

namespace fsloc {

namespace detail {

template <typename T>
struct TensorNode {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // empty until first accumulation
    bool requires_grad = false;
};

}  // namespace detail

// Shared-buffer handle over a dense array. Values are fixed once an op has
// produced them; the only mutation points are gradient accumulation and
// optimizer updates on parameters.
template <typename T>
class Tensor {
    static_assert(std::is_floating_point_v<T>, "Tensor is float/double only");

public:
    using value_type = T;

    Tensor() = default;

    Tensor(Shape shape, std::vector<T> data, bool requires_grad = false) {
        if (!shape_valid(shape))
            throw ShapeError(detail::msg("invalid tensor shape ", shape_str(shape),
                                         ": every extent must be >= 1"));
        if (shape_numel(shape) != static_cast<long long>(data.size()))
            throw ShapeError(detail::msg("shape ", shape_str(shape), " wants ",
                                         shape_numel(shape), " values, got ", data.size()));
        node_ = std::make_shared<detail::TensorNode<T>>();
        node_->shape = std::move(shape);
        node_->value = std::move(data);
        node_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return full(std::move(shape), T(0), requires_grad);
    }

    static Tensor full(Shape shape, T v, bool requires_grad = false) {
        const auto n = checked_numel(shape);
        return Tensor(std::move(shape), std::vector<T>(static_cast<std::size_t>(n), v),
                      requires_grad);
    }

    static Tensor scalar(T v) { return Tensor({1, 1, 1, 1}, {v}); }

    static Tensor randn(Shape shape, Rng& rng, T stddev = T(1), bool requires_grad = false) {
        const auto n = checked_numel(shape);
        std::vector<T> data(static_cast<std::size_t>(n));
        for (auto& x : data) x = static_cast<T>(rng.normal(0.0, static_cast<double>(stddev)));
        return Tensor(std::move(shape), std::move(data), requires_grad);
    }

    bool defined() const { return node_ != nullptr; }

    const Shape& shape() const { return node_->shape; }
    int ndim() const { return static_cast<int>(node_->shape.size()); }
    int dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
    long long numel() const { return shape_numel(node_->shape); }

    // 4-D accessors (batch x channel x height x width).
    int batch() const { return dim4(0); }
    int channels() const { return dim4(1); }
    int height() const { return dim4(2); }
    int width() const { return dim4(3); }

    bool is_scalar() const {
        for (int e : node_->shape)
            if (e != 1) return false;
        return true;
    }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool rg) { node_->requires_grad = rg; }

    const std::vector<T>& values() const { return node_->value; }
    const T* data() const { return node_->value.data(); }
    // Mutation point for owners (parameter initialization, optimizer steps).
    T* data_mut() { return node_->value.data(); }

    T operator()(int b, int c, int y, int x) const {
        return node_->value[static_cast<std::size_t>(index4(b, c, y, x))];
    }

    long long index4(int b, int c, int y, int x) const {
        return ((static_cast<long long>(b) * dim4(1) + c) * dim4(2) + y) * dim4(3) + x;
    }

    bool has_grad() const { return !node_->grad.empty(); }

    const std::vector<T>& grad() const {
        ensure_grad();
        return node_->grad;
    }

    // Allocates (zero-filled) on first use; accumulates across backward
    // calls until zero_grad().
    std::vector<T>& grad_buffer() const {
        ensure_grad();
        return node_->grad;
    }

    void accumulate_grad(const T* g, long long n) const {
        auto& buf = grad_buffer();
        for (long long i = 0; i < n; ++i) buf[static_cast<std::size_t>(i)] += g[i];
    }

    void zero_grad() const {
        if (!node_->grad.empty())
            std::fill(node_->grad.begin(), node_->grad.end(), T(0));
    }

    // Stable identity of the underlying buffer; shared layers compare equal.
    const void* id() const { return node_.get(); }

    bool same_shape(const Tensor& other) const { return node_->shape == other.node_->shape; }

private:
    static long long checked_numel(const Shape& shape) {
        if (!shape_valid(shape))
            throw ShapeError(detail::msg("invalid tensor shape ", shape_str(shape),
                                         ": every extent must be >= 1"));
        return shape_numel(shape);
    }

    int dim4(int i) const {
        if (node_->shape.size() != 4)
            throw ShapeError(detail::msg("expected a 4-D tensor, got ", shape_str(node_->shape)));
        return node_->shape[static_cast<std::size_t>(i)];
    }

    void ensure_grad() const {
        if (node_->grad.empty())
            node_->grad.assign(node_->value.size(), T(0));
    }

    std::shared_ptr<detail::TensorNode<T>> node_;
};

// Ordered record of the differentiable ops of one forward pass. backward()
// replays the records in exact reverse execution order, so the recording
// order is itself a valid topological order of the graph.
template <typename T>
class GradTape {
public:
    void record(const char* op, std::function<void()> apply) {
        records_.push_back({op, std::move(apply)});
    }

    std::size_t size() const { return records_.size(); }
    bool empty() const { return records_.empty(); }

    std::vector<std::string> ops() const {
        std::vector<std::string> names;
        names.reserve(records_.size());
        for (const auto& r : records_) names.emplace_back(r.op);
        return names;
    }

    void clear() { records_.clear(); }

    void replay_backward() const {
        for (auto it = records_.rbegin(); it != records_.rend(); ++it) it->apply();
    }

private:
    struct Record {
        const char* op;
        std::function<void()> apply;
    };
    std::vector<Record> records_;
};

template <typename T>
void backward(const Tensor<T>& loss, GradTape<T>& tape) {
    if (!loss.is_scalar())
        throw ShapeError(detail::msg("backward needs a scalar loss, got shape ",
                                     shape_str(loss.shape())));
    if (tape.empty())
        throw ValueError("backward on an empty tape");
    loss.grad_buffer()[0] += T(1);
    tape.replay_backward();
}

}  // namespace fsloc
