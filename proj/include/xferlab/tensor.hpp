#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "xferlab/error.hpp"

namespace xferlab {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

namespace detail {

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// One vertex of the dynamic graph. Leaves have no backward rule; interior
/// nodes own their parents so the graph lives exactly as long as its root.
struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<NodePtr> parents;
    // Reads self.grad and accumulates into the parents' grads.
    std::function<void(Node& self)> backward;

    bool is_leaf() const noexcept { return !backward; }

    std::span<double> grad_buffer() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
        return grad;
    }
};

inline thread_local bool grad_disabled = false;

}  // namespace detail

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard() : previous_(detail::grad_disabled) { detail::grad_disabled = true; }
    ~NoGradGuard() { detail::grad_disabled = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

inline bool grad_enabled() noexcept { return !detail::grad_disabled; }

/// Dense row-major array of doubles with an optional gradient accumulator.
///
/// Tensor is a handle: copies alias the same storage, the way autodiff
/// graphs need them to. Use clone() for an independent deep copy.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, double fill = 0.0) : node_(std::make_shared<detail::Node>()) {
        node_->data.assign(shape_numel(shape), fill);
        node_->shape = std::move(shape);
    }

    Tensor(Shape shape, std::vector<double> values) : node_(std::make_shared<detail::Node>()) {
        if (values.size() != shape_numel(shape)) {
            throw DimensionError("tensor data length " + std::to_string(values.size()) +
                                 " does not match shape " + shape_str(shape));
        }
        node_->shape = std::move(shape);
        node_->data = std::move(values);
    }

    static Tensor scalar(double v) { return Tensor(Shape{1}, std::vector<double>{v}); }

    bool defined() const noexcept { return static_cast<bool>(node_); }

    const Shape& shape() const { return node_->shape; }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t ndim() const { return node_->shape.size(); }
    std::size_t numel() const { return node_->data.size(); }

    std::span<double> data() { return node_->data; }
    std::span<const double> data() const { return node_->data; }

    double item() const {
        if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
        return node_->data[0];
    }

    double operator[](std::size_t i) const { return node_->data[i]; }
    double& operator[](std::size_t i) { return node_->data[i]; }

    bool requires_grad() const noexcept { return node_ && node_->requires_grad; }

    Tensor& set_requires_grad(bool flag) {
        node_->requires_grad = flag;
        return *this;
    }

    bool has_grad() const noexcept { return node_ && node_->grad.size() == node_->data.size(); }

    /// Gradient accumulator; allocated (zeroed) on first access.
    std::span<double> grad() { return node_->grad_buffer(); }
    std::span<const double> grad() const { return node_->grad_buffer(); }

    void zero_grad() {
        if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
    }

    bool is_leaf() const noexcept { return !node_ || node_->is_leaf(); }

    /// Deep copy of data (and requires_grad flag) with no graph history.
    Tensor clone() const {
        Tensor t(shape(), node_->data);
        t.node_->requires_grad = node_->requires_grad;
        return t;
    }

    /// Same storage values, cut from the graph.
    Tensor detach() const { return Tensor(shape(), node_->data); }

    void backward() const;

    const detail::NodePtr& node() const noexcept { return node_; }
    explicit Tensor(detail::NodePtr n) : node_(std::move(n)) {}

private:
    detail::NodePtr node_;
};

/// Topologically ordered view of the graph that produced a tensor.
///
/// Only nodes that require gradients are included; order is parents before
/// children, so backward walks it in reverse.
class ComputeGraph {
public:
    explicit ComputeGraph(const Tensor& root) {
        if (!root.defined() || !root.requires_grad()) return;
        std::unordered_set<const detail::Node*> seen;
        // Iterative post-order DFS; recursion depth would track network depth.
        std::vector<std::pair<detail::Node*, std::size_t>> stack;
        stack.emplace_back(root.node().get(), 0);
        seen.insert(root.node().get());
        while (!stack.empty()) {
            auto& [node, next] = stack.back();
            if (next < node->parents.size()) {
                detail::Node* parent = node->parents[next++].get();
                if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
            } else {
                order_.push_back(node);
                stack.pop_back();
            }
        }
    }

    std::size_t size() const noexcept { return order_.size(); }
    const std::vector<detail::Node*>& nodes() const noexcept { return order_; }

    /// Runs reverse-mode accumulation seeded with ones at the root.
    /// Interior gradients are rebuilt from zero on every call; leaf
    /// gradients accumulate across calls until zero_grad().
    void backward() const {
        if (order_.empty()) return;
        for (auto* n : order_) {
            if (!n->is_leaf()) n->grad.assign(n->data.size(), 0.0);
        }
        auto* root = order_.back();
        auto g = root->grad_buffer();
        for (auto& v : g) v += 1.0;
        for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
            if (!(*it)->is_leaf()) (*it)->backward(**it);
        }
    }

private:
    std::vector<detail::Node*> order_;
};

inline void Tensor::backward() const {
    if (!requires_grad()) throw Error("backward() on a tensor that does not require grad");
    ComputeGraph(*this).backward();
}

namespace detail {

/// Builds an op result. Records parents and the backward rule only when
/// recording is enabled and at least one parent needs a gradient.
inline Tensor make_result(Shape shape, std::vector<double> data, std::vector<Tensor> parents,
                          std::function<void(Node&)> backward) {
    Tensor out(std::move(shape), std::move(data));
    if (!grad_enabled()) return out;
    const bool any = std::any_of(parents.begin(), parents.end(),
                                 [](const Tensor& p) { return p.requires_grad(); });
    if (!any) return out;
    auto& node = *out.node();
    node.requires_grad = true;
    node.parents.reserve(parents.size());
    for (auto& p : parents) node.parents.push_back(p.node());
    node.backward = std::move(backward);
    return out;
}

/// Gradient buffer of parent i when it participates in backward, else empty.
inline std::span<double> parent_grad(Node& self, std::size_t i) {
    Node& p = *self.parents[i];
    if (!p.requires_grad) return {};
    return p.grad_buffer();
}

}  // namespace detail

}  // namespace xferlab
