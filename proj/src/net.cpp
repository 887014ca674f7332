#include "gradreg/net.hpp"

#include <cmath>
#include <stdexcept>

#include "gradreg/ops.hpp"
#include "gradreg/rng.hpp"

namespace gradreg {

void UNetConfig::validate() const {
    if (enc_channels.size() != 4) throw std::invalid_argument("UNetConfig needs exactly 4 encoder stages");
    if (dec_channels.size() != 4) throw std::invalid_argument("UNetConfig needs exactly 4 decoder stages");
    if (refine_channels.size() != 4) throw std::invalid_argument("UNetConfig needs exactly 4 refinement convs");
    if (refine_channels.back() != 3) throw std::invalid_argument("last refinement conv must emit 3 channels");
    if (input_channels <= 0) throw std::invalid_argument("UNetConfig input_channels must be positive");
    for (const auto* list : {&enc_channels, &dec_channels, &refine_channels}) {
        for (int c : *list) {
            if (c <= 0) throw std::invalid_argument("UNetConfig channel widths must be positive");
        }
    }
}

std::vector<ConvSpec> unet_layers(const UNetConfig& config) {
    config.validate();
    std::vector<ConvSpec> layers;
    // Skip sources, finest first: the raw input then encoder outputs 0..2.
    const int skip[4] = {config.input_channels, config.enc_channels[0], config.enc_channels[1],
                         config.enc_channels[2]};
    int ch = config.input_channels;
    for (int k = 0; k < 4; ++k) {
        layers.push_back({"enc" + std::to_string(k), ch, config.enc_channels[k], 3});
        ch = config.enc_channels[k];
    }
    for (int k = 0; k < 4; ++k) {
        layers.push_back({"dec" + std::to_string(k), ch, config.dec_channels[k], 3});
        ch = config.dec_channels[k] + skip[3 - k];
    }
    for (int k = 0; k < 4; ++k) {
        layers.push_back({"ref" + std::to_string(k), ch, config.refine_channels[k], 3});
        ch = config.refine_channels[k];
    }
    return layers;
}

std::size_t Network::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params) n += p.value.size();
    return n;
}

bool Network::operator==(const Network& other) const {
    if (!(config == other.config) || params.size() != other.params.size()) return false;
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].name != other.params[i].name || !(params[i].value == other.params[i].value)) return false;
    }
    return true;
}

Network build_unet(const UNetConfig& config) {
    const auto layers = unet_layers(config);
    Network net;
    net.config = config;
    for (std::size_t li = 0; li < layers.size(); ++li) {
        const ConvSpec& spec = layers[li];
        Tensor w(kernel_shape(spec.out_channels, spec.in_channels, spec.kernel));
        Tensor b(Shape{spec.out_channels, Dims{1, 1, 1}});
        const bool head = li + 1 == layers.size();
        if (!head) {
            // He-uniform for leaky ReLU.
            const double fan_in = static_cast<double>(spec.in_channels) * spec.kernel * spec.kernel * spec.kernel;
            const double bound = std::sqrt(6.0 / ((1.0 + kLeakySlope * kLeakySlope) * fan_in));
            CounterRng rng(config.seed, li);
            for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-bound, bound);
        }
        net.params.push_back({spec.name + ".w", std::move(w)});
        net.params.push_back({spec.name + ".b", std::move(b)});
    }
    return net;
}

std::vector<Var> bind_params(Tape& tape, const std::vector<NamedTensor>& params, bool requires_grad) {
    std::vector<Var> vars;
    vars.reserve(params.size());
    for (const auto& p : params) vars.push_back(tape.leaf(p.value, requires_grad));
    return vars;
}

void check_unet_input(const Dims& d) {
    if (d.nx % 16 != 0 || d.ny % 16 != 0 || d.nz % 16 != 0) {
        throw std::invalid_argument("network input dims must be divisible by 16, got " + to_string(d) +
                                    " (crop_pad first)");
    }
}

Var predict_field(const Network& net, const std::vector<Var>& bound, Tape& tape, Var moving, Var fixed) {
    const Tensor& m = tape.value(moving);
    const Tensor& f = tape.value(fixed);
    if (m.dims() != f.dims()) {
        throw DimensionMismatch("predict_field: moving " + to_string(m.dims()) + " vs fixed " + to_string(f.dims()));
    }
    check_unet_input(m.dims());
    if (bound.size() != net.params.size()) throw std::invalid_argument("predict_field: parameter binding size");

    std::size_t layer = 0;
    auto conv = [&](Var x, int stride) {
        const Var w = bound[2 * layer];
        const Var b = bound[2 * layer + 1];
        ++layer;
        return conv3d(tape, x, w, b, stride);
    };

    const Var x0 = concat_channels(tape, moving, fixed);
    Var skips[4];
    skips[0] = x0;
    Var h = x0;
    for (int k = 0; k < 4; ++k) {
        h = leaky_relu(tape, conv(h, 2));
        if (k < 3) skips[k + 1] = h;
    }
    for (int k = 0; k < 4; ++k) {
        h = leaky_relu(tape, conv(h, 1));
        h = upsample_nearest2x(tape, h);
        h = concat_channels(tape, h, skips[3 - k]);
    }
    for (int k = 0; k < 3; ++k) h = leaky_relu(tape, conv(h, 1));
    return conv(h, 1);
}

DeformationField predict_field(const Network& net, const Volume& moving, const Volume& fixed) {
    Tape tape;
    const auto bound = bind_params(tape, net.params, false);
    const Var m = tape.leaf(Tensor::from_volume(moving));
    const Var f = tape.leaf(Tensor::from_volume(fixed));
    return DeformationField::from_tensor(tape.value(predict_field(net, bound, tape, m, f)));
}

}  // namespace gradreg
