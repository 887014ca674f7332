#include "gradreg/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "gradreg/rng.hpp"

namespace gradreg {

namespace {

enum Stream : std::uint64_t {
    kBlobStream = 1,
    kFieldStream = 2,
    kMovingNoise = 32,
    kFixedNoise = 33,
};

constexpr double kEdgeWidth = 1.5;

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

// Separable Gaussian smoothing of one channel, in place.
void smooth(std::span<double> data, const Dims& d, double sigma) {
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
    for (int t = -radius; t <= radius; ++t) {
        kernel[static_cast<std::size_t>(t + radius)] = std::exp(-0.5 * t * t / (sigma * sigma));
    }
    const int n[3] = {d.nx, d.ny, d.nz};
    const std::size_t stride[3] = {1, static_cast<std::size_t>(d.nx), static_cast<std::size_t>(d.nx) * d.ny};
    std::vector<double> line;
    for (int axis = 0; axis < 3; ++axis) {
        const int len = n[axis];
        line.resize(static_cast<std::size_t>(len));
        for (std::size_t base = 0; base < d.size(); ++base) {
            // Visit each line once, from its first element.
            const std::size_t pos = (base / stride[axis]) % static_cast<std::size_t>(len);
            if (pos != 0) continue;
            for (int i = 0; i < len; ++i) line[static_cast<std::size_t>(i)] = data[base + i * stride[axis]];
            for (int i = 0; i < len; ++i) {
                double acc = 0.0, wsum = 0.0;
                for (int t = std::max(-radius, -i); t <= std::min(radius, len - 1 - i); ++t) {
                    const double w = kernel[static_cast<std::size_t>(t + radius)];
                    acc += w * line[static_cast<std::size_t>(i + t)];
                    wsum += w;
                }
                data[base + i * stride[axis]] = acc / wsum;
            }
        }
    }
}

std::array<double, 3> displaced(const Dims& d, const DeformationField& f, int x, int y, int z) {
    const auto u = f.vector_at(d.index(x, y, z));
    return {x + u[0], y + u[1], z + u[2]};
}

}  // namespace

void PhantomConfig::validate() const {
    if (!dims.positive() || dims.nx % 16 || dims.ny % 16 || dims.nz % 16) {
        throw std::invalid_argument("phantom dims must be positive multiples of 16, got " + to_string(dims));
    }
    if (n_blobs < 1) throw std::invalid_argument("n_blobs must be >= 1");
    if (!(deform_amplitude >= 0.0)) throw std::invalid_argument("deform_amplitude must be >= 0");
    if (!(deform_smoothness > 0.0)) throw std::invalid_argument("deform_smoothness must be > 0");
    if (!(noise_sigma >= 0.0)) throw std::invalid_argument("noise_sigma must be >= 0");
}

PhantomConfig parse_phantom_config(const std::string& text, PhantomConfig base) {
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw std::invalid_argument("config line without '=': " + line);
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        try {
            if (key == "dims") {
                int nx = 0, ny = 0, nz = 0;
                char c1 = 0, c2 = 0;
                std::istringstream v(value);
                if (!(v >> nx >> c1 >> ny >> c2 >> nz) || c1 != ',' || c2 != ',') {
                    throw std::invalid_argument("bad value for dims: " + value);
                }
                base.dims = Dims{nx, ny, nz};
            } else if (key == "n_blobs") {
                base.n_blobs = std::stoi(value);
            } else if (key == "deform_amplitude") {
                base.deform_amplitude = std::stod(value);
            } else if (key == "deform_smoothness") {
                base.deform_smoothness = std::stod(value);
            } else if (key == "noise_sigma") {
                base.noise_sigma = std::stod(value);
            } else if (key == "seed") {
                base.seed = std::stoull(value);
            } else {
                throw std::invalid_argument("unknown phantom config key: " + key);
            }
        } catch (const std::logic_error& e) {
            if (std::string(e.what()).find(key) != std::string::npos) throw;
            throw std::invalid_argument("bad value for " + key + ": " + value);
        }
    }
    base.validate();
    return base;
}

std::string to_config_text(const PhantomConfig& c) {
    char buf[512];
    std::snprintf(buf, sizeof buf,
                  "dims=%d,%d,%d\nn_blobs=%d\ndeform_amplitude=%.17g\ndeform_smoothness=%.17g\nnoise_sigma=%.17g\n"
                  "seed=%llu\n",
                  c.dims.nx, c.dims.ny, c.dims.nz, c.n_blobs, c.deform_amplitude, c.deform_smoothness, c.noise_sigma,
                  static_cast<unsigned long long>(c.seed));
    return buf;
}

DeformationField random_smooth_field(std::uint64_t seed, Dims dims, double amplitude, double sigma) {
    if (!(amplitude >= 0.0)) throw std::invalid_argument("amplitude must be >= 0");
    if (!(sigma > 0.0)) throw std::invalid_argument("sigma must be > 0");
    const std::size_t n = dims.size();
    std::vector<double> disp(3 * n, 0.0);
    if (amplitude == 0.0) return DeformationField(dims, std::move(disp));
    for (int c = 0; c < 3; ++c) {
        CounterRng rng(seed, kFieldStream + static_cast<std::uint64_t>(c));
        std::span<double> ch(disp.data() + c * n, n);
        for (double& v : ch) v = rng.normal();
        smooth(ch, dims, sigma);
    }
    double max_mag = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        max_mag = std::max(max_mag, std::sqrt(disp[i] * disp[i] + disp[n + i] * disp[n + i] +
                                              disp[2 * n + i] * disp[2 * n + i]));
    }
    if (max_mag > 0.0) {
        const double s = amplitude / max_mag;
        for (double& v : disp) v *= s;
    }
    return DeformationField(dims, std::move(disp));
}

std::vector<Ellipsoid> random_blobs(const PhantomConfig& config) {
    CounterRng rng(config.seed, kBlobStream);
    const double n[3] = {static_cast<double>(config.dims.nx), static_cast<double>(config.dims.ny),
                         static_cast<double>(config.dims.nz)};
    std::vector<Ellipsoid> blobs;
    for (int k = 0; k < config.n_blobs; ++k) {
        Ellipsoid e{};
        for (int a = 0; a < 3; ++a) {
            e.center[static_cast<std::size_t>(a)] = rng.uniform(0.3, 0.7) * (n[a] - 1.0);
            e.radii[static_cast<std::size_t>(a)] = rng.uniform(0.08, 0.15) * n[a];
        }
        e.level = rng.uniform(0.45, 1.0);
        blobs.push_back(e);
    }
    return blobs;
}

namespace {

// Signed distance proxy in voxels: positive inside, about 1 per voxel near the edge.
double inside_depth(const Ellipsoid& e, const std::array<double, 3>& p) {
    double rho2 = 0.0;
    for (int a = 0; a < 3; ++a) {
        const double t = (p[static_cast<std::size_t>(a)] - e.center[static_cast<std::size_t>(a)]) /
                         e.radii[static_cast<std::size_t>(a)];
        rho2 += t * t;
    }
    const double mean_r = (e.radii[0] + e.radii[1] + e.radii[2]) / 3.0;
    return (1.0 - std::sqrt(rho2)) * mean_r;
}

}  // namespace

double shape_at(const std::vector<Ellipsoid>& blobs, const std::array<double, 3>& p) {
    double s = 0.0;
    for (const auto& e : blobs) {
        const double occupancy = 1.0 / (1.0 + std::exp(-inside_depth(e, p) / (kEdgeWidth / 4.0)));
        s = std::max(s, e.level * occupancy);
    }
    return s;
}

std::int32_t label_at(const std::vector<Ellipsoid>& blobs, const std::array<double, 3>& p) {
    std::int32_t label = 0;
    double best = 0.0;
    for (std::size_t k = 0; k < blobs.size(); ++k) {
        const double depth = inside_depth(blobs[k], p);
        if (depth > 0.0 && blobs[k].level > best) {
            best = blobs[k].level;
            label = static_cast<std::int32_t>(k + 1);
        }
    }
    return label;
}

PhantomCase generate_phantom_pair(const PhantomConfig& config) {
    config.validate();
    return generate_phantom_pair(config, random_smooth_field(config.seed, config.dims, config.deform_amplitude,
                                                             config.deform_smoothness));
}

PhantomCase generate_phantom_pair(const PhantomConfig& config, const DeformationField& gt_field) {
    config.validate();
    const Dims d = config.dims;
    if (gt_field.dims() != d) throw DimensionMismatch("ground-truth field dims " + to_string(gt_field.dims()));
    const auto blobs = random_blobs(config);
    const DeformationField bias = random_smooth_field(config.seed ^ 0xB1A5B1A5B1A5B1A5ULL, d, 0.15, 8.0);
    CounterRng moving_noise(config.seed, kMovingNoise);
    CounterRng fixed_noise(config.seed, kFixedNoise);

    std::vector<double> moving(d.size()), fixed(d.size());
    std::vector<std::int32_t> moving_labels(d.size());
    for (int z = 0; z < d.nz; ++z) {
        for (int y = 0; y < d.ny; ++y) {
            for (int x = 0; x < d.nx; ++x) {
                const std::size_t i = d.index(x, y, z);
                const std::array<double, 3> here{static_cast<double>(x), static_cast<double>(y),
                                                 static_cast<double>(z)};
                const auto there = displaced(d, gt_field, x, y, z);
                const double s_moving = shape_at(blobs, here);
                const double s_fixed = shape_at(blobs, there);
                // CT-like: affine in the shape; MR-like: inverted power law under a smooth bias.
                moving[i] = 0.8 * s_moving + 0.1 + config.noise_sigma * moving_noise.normal();
                fixed[i] = (1.0 - std::pow(s_fixed, 0.7)) * (1.0 + bias.at(0, i)) +
                           config.noise_sigma * fixed_noise.normal();
                moving_labels[i] = label_at(blobs, here);
            }
        }
    }
    LabelMask moving_mask(d, std::move(moving_labels));
    // Nearest-neighbour warp keeps the fixed mask on exactly the labels the
    // stored field maps onto it.
    LabelMask fixed_mask = warp_nearest(moving_mask, gt_field);
    return PhantomCase{normalize_intensity(Volume(d, {}, std::move(moving))),
                       normalize_intensity(Volume(d, {}, std::move(fixed))), std::move(moving_mask),
                       std::move(fixed_mask), gt_field};
}

}  // namespace gradreg
