#pragma once

#include <cstdint>
#include <vector>

#include "gradreg/net.hpp"
#include "gradreg/tape.hpp"
#include "gradreg/warp.hpp"

namespace gradreg {

/// Learnable gate over the two displacement fields: a 6->6 conv with sigmoid
/// yields per-voxel weights for each channel of both fields, and a 1x1x1
/// bottleneck maps the re-weighted 6 channels back to 3.
struct GatedFusionParams {
    int gate_kernel = 3;
    Tensor gate_w;        // (6 out, 6 in, k^3)
    Tensor gate_b;        // 6
    Tensor bottleneck_w;  // (3 out, 6 in, 1)
    Tensor bottleneck_b;  // 3

    std::vector<NamedTensor> named() const;
    static GatedFusionParams from_named(const std::vector<NamedTensor>& tensors);
    std::size_t parameter_count() const;
    bool operator==(const GatedFusionParams&) const = default;
};

/// Small fan-in scaled gate weights with zero gate bias; the bottleneck sums
/// channel c and c+3, so the initial gated output is close to the average.
/// `zero_gate` zeroes the gate weights, which makes gated_fuse reproduce
/// average_fuse exactly.
GatedFusionParams init_gated_fusion(std::uint64_t seed, bool zero_gate = false, int gate_kernel = 3);

DeformationField average_fuse(const DeformationField& f_i, const DeformationField& f_g);
Var average_fuse(Tape& tape, Var f_i, Var f_g);

/// Tape-level gated fusion. `bound` holds the four tensors in named() order.
Var gated_fuse(Tape& tape, const std::vector<Var>& bound, Var f_i, Var f_g);

/// Inference convenience wrapper.
DeformationField gated_fuse(const GatedFusionParams& params, const DeformationField& f_i,
                            const DeformationField& f_g);

/// Gate maps (p_i, p_g), 6 channels, for inspection.
Tensor gate_maps(const GatedFusionParams& params, const DeformationField& f_i, const DeformationField& f_g);

}  // namespace gradreg
