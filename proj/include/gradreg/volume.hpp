#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace gradreg {

/// Grid extent in voxels. Linear order is x-fastest, then y, then z.
struct Dims {
    int nx = 0;
    int ny = 0;
    int nz = 0;

    std::size_t size() const {
        return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny) * static_cast<std::size_t>(nz);
    }
    std::size_t index(int x, int y, int z) const {
        return (static_cast<std::size_t>(z) * static_cast<std::size_t>(ny) + static_cast<std::size_t>(y)) *
                   static_cast<std::size_t>(nx) +
               static_cast<std::size_t>(x);
    }
    int operator[](int axis) const { return axis == 0 ? nx : (axis == 1 ? ny : nz); }
    bool positive() const { return nx > 0 && ny > 0 && nz > 0; }
    bool operator==(const Dims&) const = default;
};

std::string to_string(const Dims& d);

/// Millimetres per voxel along x, y, z.
struct Spacing {
    double sx = 1.0;
    double sy = 1.0;
    double sz = 1.0;

    double operator[](int axis) const { return axis == 0 ? sx : (axis == 1 ? sy : sz); }
    bool operator==(const Spacing&) const = default;
};

class DimensionMismatch : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Dense scalar 3D image. Immutable once built; all operations return new volumes.
class Volume {
public:
    Volume() = default;
    Volume(Dims dims, Spacing spacing, std::vector<double> data);
    Volume(Dims dims, Spacing spacing = {});  // zero-filled

    const Dims& dims() const { return dims_; }
    const Spacing& spacing() const { return spacing_; }
    const std::vector<double>& data() const { return data_; }
    std::size_t size() const { return data_.size(); }

    double at(int x, int y, int z) const { return data_[dims_.index(x, y, z)]; }
    double operator[](std::size_t i) const { return data_[i]; }

    const std::optional<std::pair<double, double>>& intensity_range() const { return intensity_range_; }
    Volume with_intensity_range(std::pair<double, double> range) const;

    friend bool operator==(const Volume& a, const Volume& b) {
        return a.dims_ == b.dims_ && a.spacing_ == b.spacing_ && a.data_ == b.data_;
    }

private:
    Dims dims_{};
    Spacing spacing_{};
    std::vector<double> data_;
    std::optional<std::pair<double, double>> intensity_range_;
};

/// Per-voxel segmentation labels; 0 is background.
class LabelMask {
public:
    LabelMask() = default;
    LabelMask(Dims dims, std::vector<std::int32_t> labels, Spacing spacing = {});

    const Dims& dims() const { return dims_; }
    const Spacing& spacing() const { return spacing_; }
    const std::vector<std::int32_t>& labels() const { return labels_; }
    std::int32_t at(int x, int y, int z) const { return labels_[dims_.index(x, y, z)]; }

    /// Sorted distinct non-zero labels present.
    std::vector<std::int32_t> label_set() const;

    friend bool operator==(const LabelMask&, const LabelMask&) = default;

private:
    Dims dims_{};
    Spacing spacing_{};
    std::vector<std::int32_t> labels_;
};

Volume to_volume(const LabelMask& m);
/// Rejects non-integral or negative voxel values.
LabelMask to_label_mask(const Volume& v);

/// Min-max rescale to [0, 1]; constant input maps to zeros. Records the source range.
Volume normalize_intensity(const Volume& v);

/// Center crop / symmetric zero pad each axis to `target`. Spacing is preserved.
Volume crop_pad(const Volume& v, Dims target);

// ---------------------------------------------------------------------------
// File I/O

enum class VolumeFormat { kRaw, kNifti1 };

class VolumeIoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};
class MalformedHeader : public VolumeIoError {
public:
    using VolumeIoError::VolumeIoError;
};
class SizeMismatch : public VolumeIoError {
public:
    using VolumeIoError::VolumeIoError;
};
class UnsupportedScalarType : public VolumeIoError {
public:
    using VolumeIoError::VolumeIoError;
};
class UnsupportedFeature : public VolumeIoError {
public:
    using VolumeIoError::VolumeIoError;
};

/// Multi-channel payload as stored in a raw+header pair. Channel-major, x-fastest.
struct RawImage {
    Dims dims;
    Spacing spacing;
    int channels = 1;
    std::vector<double> data;
};

/// `path` may name either the `.vol` payload or the `.volh` header; the
/// sibling is derived by swapping the extension.
RawImage load_raw(const std::filesystem::path& path);

/// Writes float32 when every value survives the narrowing exactly,
/// otherwise float64, so that load_raw(save_raw(x)) is always bit-exact.
void save_raw(const RawImage& image, const std::filesystem::path& path);

Volume load_volume(const std::filesystem::path& path, VolumeFormat format);
/// Chooses the format from the extension (`.nii` or `.vol`/`.volh`).
Volume load_volume(const std::filesystem::path& path);
void save_volume(const Volume& v, const std::filesystem::path& path);

LabelMask load_label_mask(const std::filesystem::path& path);
void save_label_mask(const LabelMask& m, const std::filesystem::path& path);

/// Returns the payload/header pair for a raw volume path.
std::pair<std::filesystem::path, std::filesystem::path> raw_paths(const std::filesystem::path& path);

/// Temp file + rename in the destination directory.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

}  // namespace gradreg
