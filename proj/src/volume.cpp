#include "gradreg/volume.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace gradreg {

std::string to_string(const Dims& d) {
    return std::to_string(d.nx) + "x" + std::to_string(d.ny) + "x" + std::to_string(d.nz);
}

Volume::Volume(Dims dims, Spacing spacing, std::vector<double> data)
    : dims_(dims), spacing_(spacing), data_(std::move(data)) {
    if (!dims_.positive()) {
        throw std::invalid_argument("Volume dims must be positive, got " + to_string(dims_));
    }
    if (data_.size() != dims_.size()) {
        throw DimensionMismatch("Volume data length " + std::to_string(data_.size()) +
                                    " does not match dims " + to_string(dims_));
    }
    if (!(spacing_.sx > 0.0 && spacing_.sy > 0.0 && spacing_.sz > 0.0)) {
        throw std::invalid_argument("Volume spacing must be positive");
    }
}

Volume::Volume(Dims dims, Spacing spacing) : Volume(dims, spacing, std::vector<double>(dims.size(), 0.0)) {}

Volume Volume::with_intensity_range(std::pair<double, double> range) const {
    Volume out = *this;
    out.intensity_range_ = range;
    return out;
}

LabelMask::LabelMask(Dims dims, std::vector<std::int32_t> labels, Spacing spacing)
    : dims_(dims), spacing_(spacing), labels_(std::move(labels)) {
    if (!dims_.positive() || labels_.size() != dims_.size()) {
        throw DimensionMismatch("LabelMask size does not match dims " + to_string(dims_));
    }
    for (auto l : labels_) {
        if (l < 0) throw std::invalid_argument("LabelMask labels must be non-negative");
    }
}

std::vector<std::int32_t> LabelMask::label_set() const {
    std::set<std::int32_t> s;
    for (auto l : labels_) {
        if (l != 0) s.insert(l);
    }
    return {s.begin(), s.end()};
}

Volume to_volume(const LabelMask& m) {
    std::vector<double> data(m.labels().begin(), m.labels().end());
    return Volume(m.dims(), m.spacing(), std::move(data));
}

LabelMask to_label_mask(const Volume& v) {
    std::vector<std::int32_t> labels(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double x = v[i];
        if (x < 0.0 || std::floor(x) != x || x > 2147483647.0) {
            throw std::invalid_argument("label volume holds a non-integral or negative value");
        }
        labels[i] = static_cast<std::int32_t>(x);
    }
    return LabelMask(v.dims(), std::move(labels), v.spacing());
}

Volume normalize_intensity(const Volume& v) {
    const auto [lo_it, hi_it] = std::minmax_element(v.data().begin(), v.data().end());
    const double lo = *lo_it;
    const double hi = *hi_it;
    std::vector<double> out(v.size(), 0.0);
    if (hi > lo) {
        const double range = hi - lo;
        for (std::size_t i = 0; i < v.size(); ++i) {
            // Clamp guards the last-ulp overshoot of (x - lo) / range.
            out[i] = std::clamp((v[i] - lo) / range, 0.0, 1.0);
        }
    }
    return Volume(v.dims(), v.spacing(), std::move(out)).with_intensity_range({lo, hi});
}

Volume crop_pad(const Volume& v, Dims target) {
    if (!target.positive()) {
        throw std::invalid_argument("crop_pad target dims must be positive");
    }
    const Dims& src = v.dims();
    // Source index = target index + shift; shift > 0 crops, shift < 0 pads.
    // Floor division keeps crop and pad offsets mutually inverse.
    auto shift = [](int n, int t) {
        const int d = n - t;
        return d >= 0 ? d / 2 : -((-d) / 2);
    };
    const int sx = shift(src.nx, target.nx);
    const int sy = shift(src.ny, target.ny);
    const int sz = shift(src.nz, target.nz);

    std::vector<double> out(target.size(), 0.0);
    for (int z = 0; z < target.nz; ++z) {
        const int iz = z + sz;
        if (iz < 0 || iz >= src.nz) continue;
        for (int y = 0; y < target.ny; ++y) {
            const int iy = y + sy;
            if (iy < 0 || iy >= src.ny) continue;
            for (int x = 0; x < target.nx; ++x) {
                const int ix = x + sx;
                if (ix < 0 || ix >= src.nx) continue;
                out[target.index(x, y, z)] = v.at(ix, iy, iz);
            }
        }
    }
    return Volume(target, v.spacing(), std::move(out));
}

}  // namespace gradreg
