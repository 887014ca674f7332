#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gradreg/tape.hpp"
#include "gradreg/volume.hpp"
#include "gradreg/warp.hpp"

namespace gradreg {

/// Encoder/decoder widths. Four stride-2 encoder convs, four decoder stages
/// (conv, nearest x2 upsample, skip concat), four full-resolution refinement
/// convs ending in the 3 displacement channels.
struct UNetConfig {
    std::vector<int> enc_channels{16, 32, 32, 32};
    std::vector<int> dec_channels{32, 32, 32, 32};
    std::vector<int> refine_channels{32, 16, 16, 3};
    int input_channels = 2;
    std::uint64_t seed = 0;

    /// Narrow widths used for gradient checks and desk-scale training.
    static UNetConfig thin(std::uint64_t seed = 0) {
        return UNetConfig{{2, 2, 2, 2}, {2, 2, 2, 2}, {2, 2, 2, 3}, 2, seed};
    }

    void validate() const;
    bool operator==(const UNetConfig&) const = default;
};

struct NamedTensor {
    std::string name;
    Tensor value;
};

/// One conv layer's place in the parameter list.
struct ConvSpec {
    std::string name;
    int in_channels;
    int out_channels;
    int kernel;
};

/// Layer list implied by a config, in parameter order.
std::vector<ConvSpec> unet_layers(const UNetConfig& config);

struct Network {
    UNetConfig config;
    /// Alternating "<layer>.w" / "<layer>.b" tensors in layer order.
    std::vector<NamedTensor> params;

    std::size_t parameter_count() const;
    bool operator==(const Network& other) const;
};

/// Fan-in scaled uniform weights, zero biases; the last refinement conv is all
/// zeros so an untrained network predicts the identity transform.
Network build_unet(const UNetConfig& config);

/// Puts every parameter tensor on the tape, in `params` order.
std::vector<Var> bind_params(Tape& tape, const std::vector<NamedTensor>& params, bool requires_grad);

/// Input dims must be divisible by 16.
void check_unet_input(const Dims& d);

/// Returns the 3-channel full-resolution field node.
Var predict_field(const Network& net, const std::vector<Var>& bound, Tape& tape, Var moving, Var fixed);

/// Inference convenience wrapper.
DeformationField predict_field(const Network& net, const Volume& moving, const Volume& fixed);

}  // namespace gradreg
