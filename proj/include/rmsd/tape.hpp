#pragma once

#include <functional>
#include <initializer_list>
#include <vector>

#include "rmsd/tensor.hpp"

namespace rmsd {

/// Handle to a value recorded on a Tape.
struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
    friend bool operator==(Var, Var) = default;
};

/// Reverse-mode gradient tape.
///
/// Nodes are appended in execution order, so every node's inputs precede it;
/// backward() walks the nodes in exact reverse order. Nodes whose inputs
/// carry no gradient are stored without a backward function.
template <typename Scalar>
class Tape {
public:
    using Backward = std::function<void(Tape&, const Tensor<Scalar>& grad_out)>;

    Var leaf(Tensor<Scalar> value, bool requires_grad = true) {
        nodes_.push_back(Node{std::move(value), {}, {}, requires_grad});
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    Var constant(Tensor<Scalar> value) { return leaf(std::move(value), false); }

    /// Appends the result of a primitive. `backward` receives the gradient of
    /// the output and must accumulate into the inputs that require grad.
    Var record(Tensor<Scalar> value, std::initializer_list<Var> inputs, Backward backward) {
        return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(backward));
    }
    Var record(Tensor<Scalar> value, std::span<const Var> inputs, Backward backward) {
        bool needs = false;
        for (Var v : inputs) needs = needs || node(v).requires_grad;
        nodes_.push_back(Node{std::move(value), {}, needs ? std::move(backward) : Backward{}, needs});
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    const Tensor<Scalar>& value(Var v) const { return node(v).value; }
    const Shape& shape(Var v) const { return node(v).value.shape(); }
    bool requires_grad(Var v) const { return node(v).requires_grad; }

    /// Gradient accumulated for v; zeros if nothing flowed into it.
    Tensor<Scalar> grad(Var v) const {
        const Node& n = node(v);
        return n.grad.empty() ? Tensor<Scalar>::zeros(n.value.shape()) : n.grad;
    }

    void accumulate(Var v, const Tensor<Scalar>& g) {
        Node& n = node(v);
        if (!n.requires_grad) return;
        if (g.shape() != n.value.shape())
            throw ShapeError("gradient " + g.shape().str() + " does not match value " + n.value.shape().str());
        if (n.grad.empty()) {
            n.grad = g;
        } else {
            n.grad.vec() += g.vec();
        }
    }
    void accumulate(Var v, Tensor<Scalar>&& g) {
        Node& n = node(v);
        if (!n.requires_grad) return;
        if (g.shape() != n.value.shape())
            throw ShapeError("gradient " + g.shape().str() + " does not match value " + n.value.shape().str());
        if (n.grad.empty()) {
            n.grad = std::move(g);
        } else {
            n.grad.vec() += g.vec();
        }
    }

    /// Seeds d loss / d loss = 1 and propagates to every recorded node.
    void backward(Var loss) {
        if (node(loss).value.shape() != Shape{1, 1, 1, 1})
            throw ContractError("backward: loss must be a 1x1x1x1 scalar, got " + node(loss).value.shape().str());
        for (Node& n : nodes_) n.grad = Tensor<Scalar>();
        node(loss).grad = Tensor<Scalar>::ones(Shape{1, 1, 1, 1});
        for (int i = loss.id; i >= 0; --i) {
            Node& n = nodes_[i];
            if (!n.backward || n.grad.empty()) continue;
            // Copy: the closure may append gradients to earlier nodes only.
            const Tensor<Scalar> g = n.grad;
            n.backward(*this, g);
        }
    }

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor<Scalar> value;
        Tensor<Scalar> grad;
        Backward backward;
        bool requires_grad = false;
    };

    Node& node(Var v) {
        if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) throw ContractError("invalid tape variable");
        return nodes_[v.id];
    }
    const Node& node(Var v) const {
        if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) throw ContractError("invalid tape variable");
        return nodes_[v.id];
    }

    std::vector<Node> nodes_;
};

}  // namespace rmsd
