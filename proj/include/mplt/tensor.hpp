#pragma once

// Dense row-major tensor with tape-free reverse-mode differentiation.
//
// Every Tensor is a handle to an immutable value node. Operations that see at
// least one gradient-tracking input record their parents and a backward
// closure; calling backward() on a scalar result walks the graph in reverse
// topological order and accumulates into each leaf's grad buffer.

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

namespace mplt {

using Shape = std::vector<std::size_t>;

struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline std::size_t numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

namespace detail {

inline bool& grad_mode_flag() {
    thread_local bool enabled = true;
    return enabled;
}

template <typename Real>
struct Node {
    Shape shape;
    std::vector<Real> value;
    std::vector<Real> grad;
    bool requires_grad = false;
    std::string_view op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    // Reads the output gradient and accumulates into the parents.
    std::function<void(std::span<const Real>)> backward;

    std::span<Real> grad_buffer() {
        if (grad.empty()) grad.assign(value.size(), Real(0));
        return grad;
    }
};

}  // namespace detail

/// RAII guard that disables graph recording on the current thread.
class NoGradGuard {
public:
    NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
    ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

inline bool grad_mode_enabled() { return detail::grad_mode_flag(); }

template <typename Real = double>
class Tensor {
public:
    using value_type = Real;
    using NodePtr = std::shared_ptr<detail::Node<Real>>;

    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        std::vector<Real> v(numel(shape), Real(0));
        return from(std::move(shape), std::move(v), requires_grad);
    }

    static Tensor full(Shape shape, Real value, bool requires_grad = false) {
        std::vector<Real> v(numel(shape), value);
        return from(std::move(shape), std::move(v), requires_grad);
    }

    static Tensor from(Shape shape, std::vector<Real> values, bool requires_grad = false) {
        for (auto e : shape)
            if (e == 0) throw DimensionError("tensor extents must be positive: " + shape_str(shape));
        if (numel(shape) != values.size())
            throw DimensionError("value count " + std::to_string(values.size()) +
                                 " does not match shape " + shape_str(shape));
        auto node = std::make_shared<detail::Node<Real>>();
        node->shape = std::move(shape);
        node->value = std::move(values);
        node->requires_grad = requires_grad;
        return Tensor(std::move(node));
    }

    static Tensor scalar(Real v, bool requires_grad = false) { return from({1}, {v}, requires_grad); }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t size() const { return node_->value.size(); }
    bool requires_grad() const { return node_->requires_grad; }
    std::string_view op() const { return node_->op; }

    std::span<const Real> data() const { return node_->value; }
    // Mutation is reserved for construction, loading and optimizer steps.
    std::span<Real> mutable_data() { return node_->value; }

    Real item() const {
        if (size() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
        return node_->value[0];
    }
    Real operator[](std::size_t i) const { return node_->value[i]; }
    Real at(std::size_t r, std::size_t c) const { return node_->value[r * node_->shape.back() + c]; }

    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const Real> grad() const { return node_->grad; }
    std::span<Real> mutable_grad() { return node_->grad_buffer(); }
    void zero_grad() { node_->grad.clear(); }

    /// Copy of the value with no history.
    Tensor detach() const { return from(shape(), node_->value, false); }

    /// Reverse-mode sweep from this scalar; seeds d(self)/d(self) = 1.
    void backward() const {
        if (size() != 1) throw DimensionError("backward() requires a scalar, got " + shape_str(shape()));
        if (!node_->requires_grad) return;

        std::vector<detail::Node<Real>*> order;
        std::unordered_set<detail::Node<Real>*> seen;
        // Iterative post-order DFS.
        std::vector<std::pair<detail::Node<Real>*, std::size_t>> stack{{node_.get(), 0}};
        seen.insert(node_.get());
        while (!stack.empty()) {
            auto& [n, next] = stack.back();
            if (next < n->parents.size()) {
                auto* p = n->parents[next++].get();
                if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
            } else {
                order.push_back(n);
                stack.pop_back();
            }
        }
        node_->grad_buffer()[0] += Real(1);
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            auto* n = *it;
            if (n->backward && !n->grad.empty()) n->backward(n->grad);
        }
        // Interior gradients are scratch; only leaves keep theirs.
        for (auto* n : order)
            if (n->backward) n->grad.clear();
    }

    const NodePtr& node() const { return node_; }

    /// Builds an op result. Throws NumericError if any output is non-finite.
    template <typename Backward>
    static Tensor make_result(std::string_view op, Shape shape, std::vector<Real> values,
                              std::initializer_list<const Tensor*> inputs, Backward&& backward) {
        for (const auto& v : values)
            if (!std::isfinite(v))
                throw NumericError(std::string(op) + ": non-finite value in output " + shape_str(shape));
        Tensor out = from(std::move(shape), std::move(values), false);
        out.node_->op = op;
        if (!grad_mode_enabled()) return out;
        bool tracked = false;
        for (auto* in : inputs) tracked = tracked || in->requires_grad();
        if (!tracked) return out;
        out.node_->requires_grad = true;
        for (auto* in : inputs) out.node_->parents.push_back(in->node_);
        out.node_->backward = std::forward<Backward>(backward);
        return out;
    }

    /// Grad buffer of an op input, or an empty span if it is not tracked.
    static std::span<Real> input_grad(const Tensor& t) {
        if (!t.requires_grad()) return {};
        return t.node_->grad_buffer();
    }

private:
    explicit Tensor(NodePtr node) : node_(std::move(node)) {}
    NodePtr node_;
};

/// Named learnable tensor; the name is its checkpoint identity.
template <typename Real = double>
struct Parameter {
    std::string name;
    Tensor<Real> value;
};

}  // namespace mplt
