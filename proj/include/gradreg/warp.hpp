#pragma once

#include <array>
#include <filesystem>
#include <vector>

#include "gradreg/tape.hpp"
#include "gradreg/volume.hpp"

namespace gradreg {

/// Dense displacement field in voxel units. Channel-major (dx, dy, dz), each
/// channel x-fastest. Output voxel x samples the moving image at x + u(x).
class DeformationField {
public:
    DeformationField() = default;
    DeformationField(Dims dims, std::vector<double> disp);

    static DeformationField from_tensor(const Tensor& t);
    Tensor to_tensor() const;

    const Dims& dims() const { return dims_; }
    const std::vector<double>& disp() const { return disp_; }
    std::vector<double>& disp() { return disp_; }

    /// Displacement component `axis` at linear voxel index `i`.
    double at(int axis, std::size_t i) const { return disp_[static_cast<std::size_t>(axis) * dims_.size() + i]; }
    std::array<double, 3> vector_at(std::size_t i) const { return {at(0, i), at(1, i), at(2, i)}; }

    friend bool operator==(const DeformationField&, const DeformationField&) = default;

private:
    Dims dims_{};
    std::vector<double> disp_;
};

DeformationField identity_field(Dims dims);

/// 8-corner trilinear blend with coordinates clamped into the grid.
double sample_trilinear(const Volume& v, const std::array<double, 3>& point);

/// Resamples `v` at x + f(x) for every voxel x (spatial transformer).
Volume warp_trilinear(const Volume& v, const DeformationField& f);

/// Nearest-neighbour label resampling; output labels are a subset of the input labels.
LabelMask warp_nearest(const LabelMask& m, const DeformationField& f);

/// Differentiable warp: `volume` is single channel, `field` three channels
/// over the same grid. Gradients flow to both.
Var warp(Tape& tape, Var volume, Var field);

/// Fields serialize as a 3-channel raw+header pair (`channels=3`).
void save_field(const DeformationField& f, const std::filesystem::path& path, Spacing spacing = {});
DeformationField load_field(const std::filesystem::path& path);

}  // namespace gradreg
