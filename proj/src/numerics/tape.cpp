#include "gtp/numerics/tape.hpp"

#include <stdexcept>

namespace gtp::num {

const Tensor& Var::value() const {
    if (!tape) throw std::logic_error("Var is not bound to a tape");
    return tape->value(*this);
}

Var Tape::push(Tensor value, bool requires_grad, BackwardFn backward) {
    if (!value.all_finite()) {
        throw NumericError("non-finite value produced at tape node " + std::to_string(nodes_.size()) +
                           " with shape " + shape_string(value.shape()));
    }
    nodes_.push_back(Node{std::move(value), requires_grad, std::nullopt,
                          requires_grad ? std::move(backward) : BackwardFn{}});
    return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::leaf(Tensor value, bool requires_grad) { return push(std::move(value), requires_grad, {}); }

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
    bool needs = false;
    for (const Var& in : inputs) {
        if (in.tape != this) throw std::logic_error("op mixes vars from different tapes");
        needs = needs || nodes_[in.id].requires_grad;
    }
    return push(std::move(value), needs, std::move(backward));
}

Var Tape::record(Tensor value, const std::vector<Var>& inputs, BackwardFn backward) {
    bool needs = false;
    for (const Var& in : inputs) {
        if (in.tape != this) throw std::logic_error("op mixes vars from different tapes");
        needs = needs || nodes_[in.id].requires_grad;
    }
    return push(std::move(value), needs, std::move(backward));
}

Tensor Tape::grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    if (n.grad) return *n.grad;
    return Tensor(n.value.shape());
}

Tensor& Tape::grad_buffer(std::uint32_t id) {
    Node& n = nodes_.at(id);
    if (!n.grad) n.grad = Tensor(n.value.shape());
    return *n.grad;
}

void Tape::accumulate(std::uint32_t id, const Tensor& g) {
    Node& n = nodes_.at(id);
    if (!n.requires_grad) return;
    if (g.size() != n.value.size()) {
        throw DimensionError("gradient shape " + shape_string(g.shape()) + " does not match value shape " +
                             shape_string(n.value.shape()));
    }
    Tensor& buf = grad_buffer(id);
    auto dst = buf.data();
    auto src = g.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

void Tape::backward(Var output) {
    if (value(output).size() != 1) {
        throw DimensionError("backward() needs a single-element output, got " +
                             shape_string(value(output).shape()));
    }
    backward(output, Tensor(value(output).shape(), 1.0));
}

void Tape::backward(Var output, const Tensor& seed) {
    if (consumed_) throw std::logic_error("tape already consumed by a backward pass");
    consumed_ = true;
    if (output.tape != this) throw std::logic_error("backward output belongs to another tape");
    if (!nodes_[output.id].requires_grad) return;
    accumulate(output.id, seed);
    for (std::size_t i = output.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.grad || !n.backward) continue;
        const Tensor& g = *n.grad;
        if (!g.all_finite()) throw NumericError("non-finite gradient at tape node " + std::to_string(i));
        n.backward(*this, g, n.value);
    }
}

} // namespace gtp::num
