// SPDX-License-Identifier: Apache-2.0
//
// Dense n-dimensional tensor with reverse-mode autodiff. A Tensor is a
// shared handle to a graph node holding the value, an optional gradient
// buffer (present iff requires_grad), the parent handles and a backprop
// closure. Ops build the graph as a side effect of the forward pass; the
// graph is released when the handles go out of scope after backward().
//
// Gradients accumulate: repeated backward passes without zero_grad() add
// into the same buffers. Graph construction and backward are
// single-threaded; values are immutable after creation except through
// mutable_data(), which the trainer uses to update parameters between
// steps.

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace loralab {

using Shape = std::vector<std::int64_t>;
using Mask = std::vector<std::uint8_t>;

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << " x ";
        os << s[i];
    }
    os << ']';
    return os.str();
}

inline void check_shape_positive(const Shape& s) {
    for (auto d : s)
        if (d <= 0) throw std::invalid_argument("tensor shape dimensions must be positive, got " + shape_str(s));
}

template <typename T>
struct TensorNode {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // same length as value iff requires_grad
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backprop;  // pulls this->grad into parents' grads
};

template <typename T>
class Tensor {
public:
    using Node = TensorNode<T>;

    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        check_shape_positive(shape);
        auto n = std::make_shared<Node>();
        n->value.assign(shape_numel(shape), T(0));
        n->shape = std::move(shape);
        n->requires_grad = requires_grad;
        if (requires_grad) n->grad.assign(n->value.size(), T(0));
        return Tensor(std::move(n));
    }

    static Tensor full(Shape shape, T fill, bool requires_grad = false) {
        Tensor t = zeros(std::move(shape), requires_grad);
        for (auto& v : t.node_->value) v = fill;
        return t;
    }

    static Tensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false) {
        check_shape_positive(shape);
        if (shape_numel(shape) != static_cast<std::int64_t>(data.size()))
            throw std::invalid_argument("tensor data length " + std::to_string(data.size()) +
                                        " does not match shape " + shape_str(shape));
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->value = std::move(data);
        n->requires_grad = requires_grad;
        if (requires_grad) n->grad.assign(n->value.size(), T(0));
        return Tensor(std::move(n));
    }

    static Tensor scalar(T v, bool requires_grad = false) {
        return from_data({1}, {v}, requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::int64_t ndim() const { return static_cast<std::int64_t>(node_->shape.size()); }
    std::int64_t dim(std::size_t i) const { return node_->shape[i]; }
    std::int64_t numel() const { return static_cast<std::int64_t>(node_->value.size()); }
    bool requires_grad() const { return node_->requires_grad; }

    std::span<const T> data() const { return node_->value; }
    std::span<T> mutable_data() { return node_->value; }

    bool has_grad() const { return node_->requires_grad && !node_->grad.empty(); }
    std::span<const T> grad() const {
        if (!has_grad()) throw std::logic_error("tensor has no gradient buffer");
        return node_->grad;
    }
    std::span<T> mutable_grad() {
        if (!has_grad()) throw std::logic_error("tensor has no gradient buffer");
        return node_->grad;
    }
    void zero_grad() {
        if (has_grad()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
    }

    /// Value of a scalar (single-element) tensor.
    T item() const {
        if (numel() != 1) throw std::logic_error("item() requires a scalar tensor, shape is " + shape_str(shape()));
        return node_->value[0];
    }

    /// Reverse-mode sweep from a scalar loss. Seeds d(loss)/d(loss) = 1 and
    /// accumulates into the gradient buffer of every reachable
    /// requires_grad tensor.
    void backward() {
        if (numel() != 1)
            throw std::invalid_argument("backward() requires a scalar loss, shape is " + shape_str(shape()));
        if (!node_->requires_grad) return;  // nothing trainable upstream

        // Iterative post-order DFS; reverse post-order is a topological order.
        std::vector<Node*> order;
        std::unordered_set<Node*> visited;
        std::vector<std::pair<Node*, std::size_t>> stack;
        stack.emplace_back(node_.get(), 0);
        visited.insert(node_.get());
        while (!stack.empty()) {
            auto& [cur, idx] = stack.back();
            if (idx < cur->parents.size()) {
                Node* p = cur->parents[idx++].get();
                if (p->requires_grad && !visited.count(p)) {
                    visited.insert(p);
                    stack.emplace_back(p, 0);
                }
            } else {
                order.push_back(cur);
                stack.pop_back();
            }
        }

        node_->grad[0] += T(1);
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            if ((*it)->backprop) (*it)->backprop(**it);
        }
    }

    std::shared_ptr<Node> node() const { return node_; }

    explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

private:
    std::shared_ptr<Node> node_;
};

namespace detail {

/// Node factory used by the ops. Result requires grad iff any parent does;
/// the backprop closure is dropped otherwise so the graph prunes itself at
/// frozen boundaries.
template <typename T>
Tensor<T> make_op_node(Shape shape, std::vector<T> value,
                       std::vector<Tensor<T>> parents,
                       std::function<void(TensorNode<T>&)> backprop) {
    auto n = std::make_shared<TensorNode<T>>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    bool rg = false;
    for (const auto& p : parents) rg = rg || p.requires_grad();
    n->requires_grad = rg;
    if (rg) {
        n->grad.assign(n->value.size(), T(0));
        n->parents.reserve(parents.size());
        for (auto& p : parents) n->parents.push_back(p.node());
        n->backprop = std::move(backprop);
    }
    return Tensor<T>(std::move(n));
}

}  // namespace detail

}  // namespace loralab
