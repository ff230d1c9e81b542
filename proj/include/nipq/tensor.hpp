#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace nipq {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

/// Thrown for contract violations: shape mismatches, bad arguments, malformed inputs.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

template <class T>
struct Node {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until the first backward pass reaches this node
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Propagates this node's grad into its parents' grads.
    std::function<void(Node&)> backward;

    bool is_leaf() const { return !backward; }

    std::span<T> grad_buffer() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
        return grad;
    }
};

}  // namespace detail

/// Dense row-major n-dimensional array with an optional gradient accumulator.
///
/// A BasicTensor is a shared handle: copies alias the same storage. Operations in ops.hpp
/// return fresh tensors and, when any input requires a gradient, record the edge needed
/// to propagate gradients back in backward(). Gradients of leaf tensors accumulate across
/// backward calls until zero_grad().
template <class T>
class BasicTensor {
public:
    using value_type = T;
    using NodePtr = std::shared_ptr<detail::Node<T>>;

    BasicTensor() = default;

    explicit BasicTensor(Shape shape, T fill = T(0), bool requires_grad = false)
        : node_(std::make_shared<detail::Node<T>>()) {
        node_->data.assign(shape_numel(shape), fill);
        node_->shape = std::move(shape);
        node_->requires_grad = requires_grad;
    }

    BasicTensor(Shape shape, std::vector<T> data, bool requires_grad = false)
        : node_(std::make_shared<detail::Node<T>>()) {
        if (shape_numel(shape) != data.size())
            throw Error("tensor data length " + std::to_string(data.size()) +
                        " does not match shape " + shape_str(shape));
        node_->shape = std::move(shape);
        node_->data = std::move(data);
        node_->requires_grad = requires_grad;
    }

    static BasicTensor scalar(T value, bool requires_grad = false) {
        return BasicTensor(Shape{}, value, requires_grad);
    }

    static BasicTensor from_node(NodePtr node) {
        BasicTensor t;
        t.node_ = std::move(node);
        return t;
    }

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t numel() const { return node_->data.size(); }

    std::span<T> data() { return node_->data; }
    std::span<const T> data() const { return node_->data; }
    std::vector<T> to_vector() const { return node_->data; }

    T item() const {
        if (numel() != 1) throw Error("item() on tensor of shape " + shape_str(shape()));
        return node_->data[0];
    }

    T& operator[](std::size_t i) { return node_->data[i]; }
    const T& operator[](std::size_t i) const { return node_->data[i]; }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }
    bool is_leaf() const { return node_->is_leaf(); }

    bool has_grad() const { return node_->grad.size() == node_->data.size(); }
    std::span<T> grad() { return node_->grad_buffer(); }
    std::span<const T> grad() const { return node_->grad_buffer(); }
    std::vector<T> grad_vector() const {
        return has_grad() ? node_->grad : std::vector<T>(numel(), T(0));
    }
    void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), T(0)); }

    /// Same values, no history, no gradient.
    BasicTensor detach() const { return BasicTensor(shape(), node_->data, false); }

    /// Deep copy that keeps the requires_grad flag but not the history.
    BasicTensor clone() const { return BasicTensor(shape(), node_->data, requires_grad()); }

    void backward() const;

    detail::Node<T>* node() const { return node_.get(); }
    const NodePtr& node_ptr() const { return node_; }

private:
    NodePtr node_;
};

using Tensor = BasicTensor<float>;

namespace detail {

inline bool& grad_mode_disabled() {
    thread_local bool disabled = false;
    return disabled;
}

}  // namespace detail

/// While alive, ops on this thread record no graph (evaluation-only forwards).
class NoGradGuard {
public:
    NoGradGuard() : prev_(detail::grad_mode_disabled()) { detail::grad_mode_disabled() = true; }
    ~NoGradGuard() { detail::grad_mode_disabled() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

namespace detail {

/// Builds an op result. The backward closure is kept only when some parent needs a gradient.
template <class T>
BasicTensor<T> make_result(Shape shape, std::vector<T> data,
                           std::vector<std::shared_ptr<Node<T>>> parents,
                           std::function<void(Node<T>&)> backward) {
    auto node = std::make_shared<Node<T>>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    const bool needs = !grad_mode_disabled() && std::any_of(parents.begin(), parents.end(),
                                   [](const auto& p) { return p && p->requires_grad; });
    if (needs) {
        node->requires_grad = true;
        node->parents = std::move(parents);
        node->backward = std::move(backward);
    }
    return BasicTensor<T>::from_node(std::move(node));
}

}  // namespace detail

template <class T>
void BasicTensor<T>::backward() const {
    using N = detail::Node<T>;
    if (numel() != 1)
        throw Error("backward() needs a scalar loss, got shape " + shape_str(shape()));
    if (!node_->requires_grad) return;

    // Iterative post-order DFS gives a topological order (parents before children).
    std::vector<N*> order;
    std::unordered_set<N*> visited;
    std::vector<std::pair<N*, std::size_t>> stack{{node_.get(), 0}};
    visited.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            N* p = n->parents[next++].get();
            if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    for (N* n : order)
        if (!n->is_leaf()) n->grad.assign(n->data.size(), T(0));
    node_->grad_buffer()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if (!(*it)->is_leaf()) (*it)->backward(**it);
}

}  // namespace nipq
