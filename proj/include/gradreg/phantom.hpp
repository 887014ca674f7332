#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "gradreg/volume.hpp"
#include "gradreg/warp.hpp"

namespace gradreg {

struct PhantomConfig {
    Dims dims{32, 32, 32};
    int n_blobs = 3;
    double deform_amplitude = 3.0;  // voxels
    double deform_smoothness = 6.0; // Gaussian sigma, voxels
    double noise_sigma = 0.02;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Flat key=value text (dims=nx,ny,nz, n_blobs, deform_amplitude,
/// deform_smoothness, noise_sigma, seed); unknown keys throw.
PhantomConfig parse_phantom_config(const std::string& text, PhantomConfig base = {});
std::string to_config_text(const PhantomConfig& config);

struct Ellipsoid {
    std::array<double, 3> center;
    std::array<double, 3> radii;
    double level;  // shape intensity inside, in (0, 1]
};

struct PhantomCase {
    Volume moving;  // CT-like
    Volume fixed;   // MR-like
    LabelMask moving_mask;
    LabelMask fixed_mask;
    /// warp(moving, gt_field) reproduces the fixed geometry.
    DeformationField gt_field;
};

/// Gaussian-smoothed white noise per channel (separable kernel of radius
/// ceil(3 sigma), renormalized at the border), rescaled so the largest
/// displacement magnitude equals `amplitude`.
DeformationField random_smooth_field(std::uint64_t seed, Dims dims, double amplitude, double sigma);

std::vector<Ellipsoid> random_blobs(const PhantomConfig& config);

/// Soft shape intensity at a continuous point (sigmoid edge, 1.5 voxel width)
/// and the hard label (0 = background, else blob index + 1).
double shape_at(const std::vector<Ellipsoid>& blobs, const std::array<double, 3>& p);
std::int32_t label_at(const std::vector<Ellipsoid>& blobs, const std::array<double, 3>& p);

PhantomCase generate_phantom_pair(const PhantomConfig& config);

/// Same construction with a caller-supplied ground-truth field.
PhantomCase generate_phantom_pair(const PhantomConfig& config, const DeformationField& gt_field);

}  // namespace gradreg
