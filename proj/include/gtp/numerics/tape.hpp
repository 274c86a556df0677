#pragma once

#include "gtp/numerics/tensor.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

namespace gtp::num {

class Tape;

/// Handle to a value recorded on a Tape.
struct Var {
    Tape* tape = nullptr;
    std::uint32_t id = 0;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
};

/// Ordered record of differentiable operations for one forward pass.
///
/// Ops append nodes in execution order, so the node vector is already a
/// topological order; backward() replays it in reverse. A tape supports a
/// single backward pass. Gradients of every node reached from the output are
/// retained, so intermediate gradients (e.g. of attention maps) can be read
/// after the pass.
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, const Tensor& out_grad, const Tensor& out_value)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var leaf(Tensor value, bool requires_grad = true);
    Var constant(Tensor value) { return leaf(std::move(value), false); }

    /// Appends the result of an op. `backward` is kept only if some input
    /// requires a gradient.
    Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);
    Var record(Tensor value, const std::vector<Var>& inputs, BackwardFn backward);

    const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
    bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
    bool has_grad(Var v) const { return nodes_.at(v.id).grad.has_value(); }
    /// Gradient of the backward output w.r.t. v; zeros if v was unreachable.
    Tensor grad(Var v) const;

    void accumulate(std::uint32_t id, const Tensor& g);
    Tensor& grad_buffer(std::uint32_t id);

    /// Seeds d(output)/d(output) = 1; output must hold a single element.
    void backward(Var output);
    void backward(Var output, const Tensor& seed);

    std::size_t size() const noexcept { return nodes_.size(); }
    bool consumed() const noexcept { return consumed_; }

private:
    struct Node {
        Tensor value;
        bool requires_grad = false;
        std::optional<Tensor> grad;
        BackwardFn backward;
    };

    Var push(Tensor value, bool requires_grad, BackwardFn backward);

    std::vector<Node> nodes_;
    bool consumed_ = false;
};

} // namespace gtp::num
