#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "sanet/tensor.hpp"

// Minimal reverse-mode automatic differentiation over Tensor values.
// Every op returns a Var whose node remembers its parents and a closure that
// pushes the node's gradient into theirs. Graphs are built only while grad
// mode is enabled and at least one input requires a gradient.

namespace sanet::nn {

template <typename T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    Tensor<T>& grad_buffer()
    {
        if (grad.empty() && !value.empty())
            grad = Tensor<T>(value.shape());
        return grad;
    }
};

template <typename T>
class Var {
public:
    Var() = default;
    explicit Var(Tensor<T> value, bool requires_grad = false) : node_(std::make_shared<Node<T>>())
    {
        node_->value = std::move(value);
        node_->requires_grad = requires_grad;
    }
    explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

    [[nodiscard]] bool defined() const { return node_ != nullptr; }
    [[nodiscard]] const Tensor<T>& value() const { return node_->value; }
    Tensor<T>& value() { return node_->value; }
    [[nodiscard]] const Tensor<T>& grad() const { return node_->grad; }
    Tensor<T>& grad() { return node_->grad; }
    [[nodiscard]] const Shape& shape() const { return node_->value.shape(); }
    [[nodiscard]] bool requires_grad() const { return node_ && node_->requires_grad; }
    void zero_grad()
    {
        if (!node_->grad.empty())
            node_->grad.fill(T{0});
    }
    [[nodiscard]] const std::shared_ptr<Node<T>>& node() const { return node_; }

private:
    std::shared_ptr<Node<T>> node_;
};

namespace detail {
inline bool& grad_mode()
{
    thread_local bool enabled = true;
    return enabled;
}
}  // namespace detail

[[nodiscard]] inline bool grad_enabled() { return detail::grad_mode(); }

/// Disables graph construction for its lifetime (inference, validation).
class NoGradGuard {
public:
    NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
    ~NoGradGuard() { detail::grad_mode() = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

/// Wraps an op result. `backward` receives the result node and must
/// accumulate into the gradient buffers of the parents that require it.
template <typename T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> parents, std::function<void(Node<T>&)> backward)
{
    bool needs = false;
    if (grad_enabled())
        for (const auto& p : parents)
            needs = needs || p.requires_grad();
    Var<T> out(std::move(value), needs);
    if (needs) {
        for (auto& p : parents)
            out.node()->parents.push_back(p.node());
        out.node()->backward = std::move(backward);
    }
    return out;
}

/// Back-propagates from a scalar root. Gradients accumulate into every
/// reachable node that requires one; call zero_grad on parameters between steps.
template <typename T>
void backward(const Var<T>& root)
{
    if (root.value().size() != 1)
        throw ShapeError("backward needs a scalar root, got " + root.shape().str());
    if (!root.requires_grad())
        return;
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.node().get(), 0}};
    seen.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node<T>* p = node->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second)
                stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root.node()->grad_buffer()[0] += T{1};
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backward)
            (*it)->backward(**it);
}

}  // namespace sanet::nn
