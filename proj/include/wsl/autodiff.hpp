#pragma once

// Reverse-mode automatic differentiation over Tensor values.
//
// A Tape records nodes in creation order, which is a topological order by
// construction. backward() walks the tape in reverse and accumulates
// gradients additively, so a node used twice receives the sum of both
// contributions. A tape is single-owner: build one per forward pass.

#include "wsl/tensor.hpp"

#include <cstdint>
#include <functional>
#include <vector>

namespace wsl {

struct Var {
    std::size_t id = 0;
};

class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;
    Tape(Tape&&) = default;
    Tape& operator=(Tape&&) = default;

    // Leaf holding its own value; no gradient is tracked.
    Var constant(Tensor value);
    // Leaf holding its own value with a gradient slot (e.g. an input image).
    Var input(Tensor value);
    // Leaf referencing an external tensor (a model parameter). The tensor
    // must outlive the tape and stay unchanged until backward() returns.
    Var param(const Tensor& value);
    // Leaf referencing an external tensor without a gradient slot.
    Var constant_ref(const Tensor& value);

    const Tensor& value(Var v) const;
    // Gradient of the last backward() root with respect to a leaf v; zeros if
    // v did not influence the root. Interior gradients are released during
    // the backward walk.
    Tensor grad(Var v) const;
    Tensor take_grad(Var v);
    bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
    std::size_t size() const { return nodes_.size(); }

    // Root must hold exactly one element. Throws ContractError otherwise.
    void backward(Var root);

    // Hash of every piecewise branch taken so far (ReLU signs, max-pool
    // argmax positions). Two forward passes with equal signatures evaluate
    // the same linear piece of the network.
    std::uint64_t branch_signature() const { return signature_; }

    // Op-construction interface.
    // A backward callback may consume grad_out.
    using BackwardFn = std::function<void(Tape&, Tensor& grad_out)>;
    Var record(Tensor value, bool requires_grad, BackwardFn backward);
    void accumulate(Var v, const Tensor& g);
    void accumulate(Var v, Tensor&& g);
    void accumulate(Var v, std::size_t index, double g);
    void mix_signature(std::uint64_t word);

private:
    struct Node {
        Tensor owned;
        const Tensor* external = nullptr;
        Tensor grad;
        bool requires_grad = false;
        BackwardFn backward;
        const Tensor& value() const { return external ? *external : owned; }
    };
    std::vector<Node> nodes_;
    std::uint64_t signature_ = 0xcbf29ce484222325ULL;
};

// Differentiable operations. Shapes follow the kernels in kernels.hpp.
Var conv2d(Tape& t, Var input, Var kernel, std::size_t stride, std::size_t pad);
Var add_channel_bias(Tape& t, Var x, Var bias);
Var relu(Tape& t, Var x);
Var maxpool2d(Tape& t, Var x, std::size_t size, std::size_t stride);
Var global_max_pool(Tape& t, Var x);
Var add(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, double c);
Var sum(Tape& t, Var a);
Var log_softmax(Tape& t, Var scores);
// Scalar element k of a tensor.
Var pick(Tape& t, Var a, std::size_t k);

// Numerically stable log-softmax on plain values.
Tensor log_softmax(const Tensor& scores);

} // namespace wsl
