#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "cddsa/core/array.hpp"

namespace cddsa::nn {

// One node of the dynamically-built computation graph. Ops allocate a node
// for their result and capture a closure that routes the node's gradient to
// its parents. Parameter nodes outlive the graphs built on top of them.
template <typename S>
struct Node {
    Array<S> value;
    Array<S> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node<S>>> parents;
    std::function<void(Node<S>&)> backward_fn;

    void ensure_grad() {
        if (grad.shape != value.shape) grad = Array<S>(value.shape);
    }
};

template <typename S>
class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node<S>> n) : node_(std::move(n)) {}

    static Var leaf(Array<S> value, bool requires_grad) {
        auto n = std::make_shared<Node<S>>();
        n->value = std::move(value);
        n->requires_grad = requires_grad;
        return Var(std::move(n));
    }
    static Var constant(Array<S> value) { return leaf(std::move(value), false); }
    static Var scalar(S v, bool requires_grad = false) {
        return leaf(Array<S>::scalar(v), requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    std::shared_ptr<Node<S>> node() const { return node_; }

    const Array<S>& value() const { return node_->value; }
    Array<S>& value() { return node_->value; }
    const Shape& shape() const { return node_->value.shape; }
    long numel() const { return node_->value.numel(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }

    S item() const {
        if (node_->value.numel() != 1) throw ShapeError("item(): tensor is not scalar");
        return node_->value[0];
    }

    Array<S>& grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    const Array<S>& grad() const { return node_->grad; }

    void zero_grad() {
        node_->ensure_grad();
        node_->grad.fill(S(0));
    }

    // Reverse-mode sweep from this (scalar) node.
    void backward() {
        if (node_->value.numel() != 1)
            throw ShapeError("backward(): output must be scalar, got " +
                             shape_str(node_->value.shape));
        auto order = topo_order();
        node_->ensure_grad();
        node_->grad.fill(S(0));
        node_->grad[0] = S(1);
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            Node<S>* n = *it;
            if (n->backward_fn && n->requires_grad) n->backward_fn(*n);
        }
    }

private:
    std::vector<Node<S>*> topo_order() const {
        std::vector<Node<S>*> order;
        std::unordered_set<Node<S>*> visited;
        // Iterative DFS; graphs can be thousands of nodes deep.
        std::vector<std::pair<Node<S>*, std::size_t>> stack;
        stack.emplace_back(node_.get(), 0);
        visited.insert(node_.get());
        while (!stack.empty()) {
            auto& [n, next_child] = stack.back();
            if (next_child < n->parents.size()) {
                Node<S>* p = n->parents[next_child++].get();
                if (p->requires_grad && !visited.count(p)) {
                    visited.insert(p);
                    stack.emplace_back(p, 0);
                }
            } else {
                order.push_back(n);
                stack.pop_back();
            }
        }
        return order;
    }

    std::shared_ptr<Node<S>> node_;
};

// Helper used by every op: make a result node wired to its parents.
template <typename S>
Var<S> make_op_node(Array<S> value, std::vector<Var<S>> parents,
                    std::function<void(Node<S>&)> backward_fn) {
    auto n = std::make_shared<Node<S>>();
    n->value = std::move(value);
    for (auto& p : parents) {
        if (p.node()->requires_grad) n->requires_grad = true;
        n->parents.push_back(p.node());
    }
    if (n->requires_grad) n->backward_fn = std::move(backward_fn);
    return Var<S>(std::move(n));
}

// Accumulate `src` into the grad buffer of `parent` if it wants gradients.
template <typename S>
inline void accumulate_grad(const std::shared_ptr<Node<S>>& parent, const Array<S>& src) {
    if (!parent->requires_grad) return;
    parent->ensure_grad();
    S* dst = parent->grad.ptr();
    const S* s = src.ptr();
    const long n = src.numel();
    for (long i = 0; i < n; ++i) dst[i] += s[i];
}

}  // namespace cddsa::nn
