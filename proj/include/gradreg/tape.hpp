#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "gradreg/tensor.hpp"

namespace gradreg {

/// Handle to a node recorded on a Tape.
struct Var {
    static constexpr std::size_t kInvalid = std::numeric_limits<std::size_t>::max();
    std::size_t id = kInvalid;

    bool valid() const { return id != kInvalid; }
    bool operator==(const Var&) const = default;
};

/// Reverse-mode recording of a dynamic computation graph.
///
/// Nodes are appended in execution order, so inputs always precede outputs and
/// a single reverse sweep over node ids is a valid reverse topological order.
/// A tape is single-owner; build a fresh one (or reset()) per forward pass.
class Tape {
public:
    /// Receives d(loss)/d(output) and accumulates into d(loss)/d(input_i).
    /// Entries of `grad_inputs` are null for inputs that do not require gradients.
    using BackwardFn = std::function<void(const Tensor& grad_out, std::span<Tensor* const> grad_inputs)>;

    Tape() = default;
    // Backward closures hold a reference to their tape.
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var leaf(Tensor value, bool requires_grad = false);

    /// Records an op result. If no input requires gradients the backward
    /// function is dropped and the node is a constant.
    Var record(std::string op, Tensor value, std::vector<Var> inputs, BackwardFn backward);

    const Tensor& value(Var v) const;
    bool requires_grad(Var v) const;
    bool has_grad(Var v) const;
    /// Zeros when the node received no gradient.
    Tensor grad(Var v) const;
    const std::string& op_name(Var v) const;

    /// Seeds d(out)/d(out) = 1 and sweeps backwards once.
    void backward(Var scalar_output);

    void reset();
    std::size_t size() const { return nodes_.size(); }

    /// Number of times backward() invoked this node's backward function.
    std::size_t visits(Var v) const;

    void set_check_finite(bool on) { check_finite_ = on; }

private:
    struct Node {
        std::string op;
        Tensor value;
        std::vector<Var> inputs;
        BackwardFn backward;
        bool requires_grad = false;
        bool has_grad = false;
        Tensor grad;
        std::size_t visits = 0;
    };

    const Node& node(Var v) const;

    std::vector<Node> nodes_;
    bool backward_done_ = false;
    bool check_finite_ = true;
};

}  // namespace gradreg
