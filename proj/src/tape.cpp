#include "gradreg/tape.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace gradreg {

const Tape::Node& Tape::node(Var v) const {
    if (!v.valid() || v.id >= nodes_.size()) throw std::out_of_range("Var does not belong to this tape");
    return nodes_[v.id];
}

Var Tape::leaf(Tensor value, bool requires_grad) {
    if (check_finite_ && !value.all_finite()) throw NonFiniteError("non-finite value in leaf tensor");
    Node n;
    n.op = "leaf";
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
}

Var Tape::record(std::string op, Tensor value, std::vector<Var> inputs, BackwardFn backward) {
    if (check_finite_ && !value.all_finite()) throw NonFiniteError("non-finite value produced by " + op);
    bool needs = false;
    for (const Var& in : inputs) needs = needs || node(in).requires_grad;
    Node n;
    n.op = std::move(op);
    n.value = std::move(value);
    n.inputs = std::move(inputs);
    n.requires_grad = needs;
    if (needs) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
}

const Tensor& Tape::value(Var v) const { return node(v).value; }
bool Tape::requires_grad(Var v) const { return node(v).requires_grad; }
bool Tape::has_grad(Var v) const { return node(v).has_grad; }
const std::string& Tape::op_name(Var v) const { return node(v).op; }
std::size_t Tape::visits(Var v) const { return node(v).visits; }

Tensor Tape::grad(Var v) const {
    const Node& n = node(v);
    if (n.has_grad) return n.grad;
    return Tensor(n.value.shape(), 0.0);
}

void Tape::backward(Var scalar_output) {
    if (backward_done_) throw std::logic_error("tape already differentiated; reset() before reuse");
    const Node& out = node(scalar_output);
    if (!out.value.is_scalar()) throw std::invalid_argument("backward requires a scalar output");
    backward_done_ = true;
    if (!out.requires_grad) return;

    nodes_[scalar_output.id].grad = Tensor(out.value.shape(), 1.0);
    nodes_[scalar_output.id].has_grad = true;

    std::vector<Tensor*> grad_inputs;
    for (std::size_t i = scalar_output.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.has_grad || !n.backward) continue;
        // Subnormal gradients carry nothing useful and make every later multiply very slow.
        for (double& g : n.grad.storage()) {
            if (std::abs(g) < std::numeric_limits<double>::min()) g = 0.0;
        }
        grad_inputs.assign(n.inputs.size(), nullptr);
        for (std::size_t k = 0; k < n.inputs.size(); ++k) {
            Node& in = nodes_[n.inputs[k].id];
            if (!in.requires_grad) continue;
            if (!in.has_grad) {
                in.grad = Tensor(in.value.shape(), 0.0);
                in.has_grad = true;
            }
            grad_inputs[k] = &in.grad;
        }
        n.backward(n.grad, grad_inputs);
        ++n.visits;
        if (check_finite_) {
            for (Tensor* g : grad_inputs) {
                if (g != nullptr && !g->all_finite()) {
                    throw NonFiniteError("non-finite gradient flowing out of " + n.op);
                }
            }
        }
    }
}

void Tape::reset() {
    nodes_.clear();
    backward_done_ = false;
}

}  // namespace gradreg
