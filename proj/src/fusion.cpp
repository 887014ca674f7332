#include "gradreg/fusion.hpp"

#include <cmath>
#include <stdexcept>

#include "gradreg/ops.hpp"
#include "gradreg/rng.hpp"

namespace gradreg {

std::vector<NamedTensor> GatedFusionParams::named() const {
    return {{"gate.w", gate_w}, {"gate.b", gate_b}, {"bottleneck.w", bottleneck_w}, {"bottleneck.b", bottleneck_b}};
}

GatedFusionParams GatedFusionParams::from_named(const std::vector<NamedTensor>& tensors) {
    GatedFusionParams p;
    int found = 0;
    for (const auto& t : tensors) {
        if (t.name == "gate.w") {
            p.gate_w = t.value;
        } else if (t.name == "gate.b") {
            p.gate_b = t.value;
        } else if (t.name == "bottleneck.w") {
            p.bottleneck_w = t.value;
        } else if (t.name == "bottleneck.b") {
            p.bottleneck_b = t.value;
        } else {
            throw std::invalid_argument("unknown fusion tensor: " + t.name);
        }
        ++found;
    }
    if (found != 4) throw std::invalid_argument("fusion parameters need exactly 4 tensors");
    if (p.gate_w.shape().channels != 36 || p.gate_b.size() != 6 || p.bottleneck_w.shape() != kernel_shape(3, 6, 1) ||
        p.bottleneck_b.size() != 3) {
        throw std::invalid_argument("fusion tensors have unexpected shapes");
    }
    p.gate_kernel = p.gate_w.dims().nx;
    return p;
}

std::size_t GatedFusionParams::parameter_count() const {
    return gate_w.size() + gate_b.size() + bottleneck_w.size() + bottleneck_b.size();
}

GatedFusionParams init_gated_fusion(std::uint64_t seed, bool zero_gate, int gate_kernel) {
    if (gate_kernel <= 0 || gate_kernel % 2 == 0) throw std::invalid_argument("gate kernel must be odd");
    GatedFusionParams p;
    p.gate_kernel = gate_kernel;
    p.gate_w = Tensor(kernel_shape(6, 6, gate_kernel));
    p.gate_b = Tensor(Shape{6, Dims{1, 1, 1}});
    p.bottleneck_w = Tensor(kernel_shape(3, 6, 1));
    p.bottleneck_b = Tensor(Shape{3, Dims{1, 1, 1}});
    if (!zero_gate) {
        const double fan_in = 6.0 * gate_kernel * gate_kernel * gate_kernel;
        const double bound = 0.1 / std::sqrt(fan_in);
        CounterRng rng(seed, 0x6a7e);
        for (std::size_t i = 0; i < p.gate_w.size(); ++i) p.gate_w[i] = rng.uniform(-bound, bound);
    }
    for (int c = 0; c < 3; ++c) {
        p.bottleneck_w[static_cast<std::size_t>(c * 6 + c)] = 1.0;
        p.bottleneck_w[static_cast<std::size_t>(c * 6 + c + 3)] = 1.0;
    }
    return p;
}

DeformationField average_fuse(const DeformationField& f_i, const DeformationField& f_g) {
    if (f_i.dims() != f_g.dims()) {
        throw DimensionMismatch("average_fuse: " + to_string(f_i.dims()) + " vs " + to_string(f_g.dims()));
    }
    std::vector<double> out(f_i.disp().size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = 0.5 * (f_i.disp()[i] + f_g.disp()[i]);
    return DeformationField(f_i.dims(), std::move(out));
}

Var average_fuse(Tape& tape, Var f_i, Var f_g) { return scale(tape, add(tape, f_i, f_g), 0.5); }

namespace {

void check_fields(const Tensor& a, const Tensor& b) {
    if (a.channels() != 3 || b.channels() != 3 || a.dims() != b.dims()) {
        throw DimensionMismatch("fusion inputs must be matching 3-channel fields: " + to_string(a.shape()) + " vs " +
                                to_string(b.shape()));
    }
}

}  // namespace

Var gated_fuse(Tape& tape, const std::vector<Var>& bound, Var f_i, Var f_g) {
    check_fields(tape.value(f_i), tape.value(f_g));
    if (bound.size() != 4) throw std::invalid_argument("gated_fuse expects 4 bound tensors");
    const Var both = concat_channels(tape, f_i, f_g);
    const Var gates = sigmoid(tape, conv3d(tape, both, bound[0], bound[1], 1));
    const Var p_i = slice_channels(tape, gates, 0, 3);
    const Var p_g = slice_channels(tape, gates, 3, 3);
    const Var weighted = concat_channels(tape, mul(tape, p_i, f_i), mul(tape, p_g, f_g));
    return conv3d(tape, weighted, bound[2], bound[3], 1);
}

DeformationField gated_fuse(const GatedFusionParams& params, const DeformationField& f_i,
                            const DeformationField& f_g) {
    Tape tape;
    const auto bound = bind_params(tape, params.named(), false);
    const Var a = tape.leaf(f_i.to_tensor());
    const Var b = tape.leaf(f_g.to_tensor());
    return DeformationField::from_tensor(tape.value(gated_fuse(tape, bound, a, b)));
}

Tensor gate_maps(const GatedFusionParams& params, const DeformationField& f_i, const DeformationField& f_g) {
    Tape tape;
    const auto bound = bind_params(tape, params.named(), false);
    const Var a = tape.leaf(f_i.to_tensor());
    const Var b = tape.leaf(f_g.to_tensor());
    check_fields(tape.value(a), tape.value(b));
    return tape.value(sigmoid(tape, conv3d(tape, concat_channels(tape, a, b), bound[0], bound[1], 1)));
}

}  // namespace gradreg
