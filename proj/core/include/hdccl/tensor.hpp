#pragma once

// Minimal reverse-mode automatic differentiation over dense 2-D matrices.
//
// Every value in the model is a matrix; vectors are 1 x d rows and scalars are
// 1 x 1. A Var is a shared handle to a graph node. Nodes created from inputs
// that do not require gradients are plain constants and keep no history, so
// inference code can use the same ops without building a tape.

#include <Eigen/Core>

#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace hdccl {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

using Index = Eigen::Index;
using Rng = std::mt19937_64;

template <typename T>
struct Node {
    Matrix<T> value;
    Matrix<T> grad;  // empty until something is accumulated
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward;

    template <typename Expr>
    void accumulate(const Eigen::MatrixBase<Expr>& g) {
        if (grad.size() == 0) {
            grad = g;
        } else {
            grad += g;
        }
    }
};

template <typename T>
class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

    static Var constant(Matrix<T> value) {
        auto node = std::make_shared<Node<T>>();
        node->value = std::move(value);
        return Var(std::move(node));
    }

    static Var parameter(Matrix<T> value) {
        auto node = std::make_shared<Node<T>>();
        node->value = std::move(value);
        node->requires_grad = true;
        return Var(std::move(node));
    }

    [[nodiscard]] bool defined() const { return static_cast<bool>(node_); }
    [[nodiscard]] const Matrix<T>& value() const { return node_->value; }
    [[nodiscard]] Matrix<T>& mutable_value() { return node_->value; }
    [[nodiscard]] Index rows() const { return node_->value.rows(); }
    [[nodiscard]] Index cols() const { return node_->value.cols(); }
    [[nodiscard]] T item() const { return node_->value(0, 0); }
    [[nodiscard]] bool requires_grad() const { return node_->requires_grad; }

    /// Accumulated gradient, or zeros of the value's shape if nothing flowed here.
    [[nodiscard]] Matrix<T> grad() const {
        if (node_->grad.size() == 0) {
            return Matrix<T>::Zero(rows(), cols());
        }
        return node_->grad;
    }

    void zero_grad() { node_->grad.resize(0, 0); }

    [[nodiscard]] Node<T>* node() const { return node_.get(); }
    [[nodiscard]] const std::shared_ptr<Node<T>>& shared() const { return node_; }

private:
    std::shared_ptr<Node<T>> node_;
};

namespace detail {
inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}
}  // namespace detail

[[nodiscard]] inline bool grad_enabled() { return detail::grad_mode(); }

/// Disables history recording on the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
    ~NoGradGuard() { detail::grad_mode() = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

/// Builds a result node. History is recorded only if some input requires a gradient.
template <typename T, typename BackwardFn>
Var<T> make_result(Matrix<T> value, std::initializer_list<Var<T>> inputs, BackwardFn&& backward) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    for (const auto& in : inputs) {
        if (grad_enabled() && in.requires_grad()) {
            node->requires_grad = true;
            break;
        }
    }
    if (node->requires_grad) {
        node->inputs.reserve(inputs.size());
        for (const auto& in : inputs) {
            node->inputs.push_back(in.shared());
        }
        node->backward = std::forward<BackwardFn>(backward);
    }
    return Var<T>(std::move(node));
}

/// Same as make_result for a variable number of inputs.
template <typename T, typename BackwardFn>
Var<T> make_result(Matrix<T> value, const std::vector<Var<T>>& inputs, BackwardFn&& backward) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    for (const auto& in : inputs) {
        if (grad_enabled() && in.requires_grad()) {
            node->requires_grad = true;
            break;
        }
    }
    if (node->requires_grad) {
        node->inputs.reserve(inputs.size());
        for (const auto& in : inputs) {
            node->inputs.push_back(in.shared());
        }
        node->backward = std::forward<BackwardFn>(backward);
    }
    return Var<T>(std::move(node));
}

/// Seeds d(root)/d(root) = 1 and propagates gradients to every reachable node.
/// The root must be 1 x 1.
template <typename T>
void backward(const Var<T>& root);

/// Detached copy of a value (no gradient flows back through it).
template <typename T>
Var<T> detach(const Var<T>& x) {
    return Var<T>::constant(x.value());
}

}  // namespace hdccl
