#include "gradreg/gradmap.hpp"

#include <cmath>

namespace gradreg {

Volume gradient_map(const Volume& v) {
    const Dims d = v.dims();
    if (d.nx < 2 || d.ny < 2 || d.nz < 2) {
        throw std::invalid_argument("gradient_map needs at least 2 voxels per axis, got " + to_string(d));
    }
    const std::vector<double>& in = v.data();
    std::vector<double> out(d.size());
    const std::size_t sy = static_cast<std::size_t>(d.nx);
    const std::size_t sz = sy * static_cast<std::size_t>(d.ny);
    for (int z = 0; z < d.nz; ++z) {
        const std::size_t zm = static_cast<std::size_t>(z > 0 ? z - 1 : 0) * sz;
        const std::size_t zp = static_cast<std::size_t>(z + 1 < d.nz ? z + 1 : z) * sz;
        for (int y = 0; y < d.ny; ++y) {
            const std::size_t ym = static_cast<std::size_t>(y > 0 ? y - 1 : 0) * sy;
            const std::size_t yp = static_cast<std::size_t>(y + 1 < d.ny ? y + 1 : y) * sy;
            const std::size_t row = static_cast<std::size_t>(z) * sz + static_cast<std::size_t>(y) * sy;
            for (int x = 0; x < d.nx; ++x) {
                const std::size_t xm = static_cast<std::size_t>(x > 0 ? x - 1 : 0);
                const std::size_t xp = static_cast<std::size_t>(x + 1 < d.nx ? x + 1 : x);
                const std::size_t zy = static_cast<std::size_t>(z) * sz + static_cast<std::size_t>(y) * sy;
                const std::size_t zx = static_cast<std::size_t>(z) * sz + static_cast<std::size_t>(x);
                const std::size_t yx = static_cast<std::size_t>(y) * sy + static_cast<std::size_t>(x);
                const double gx = in[zy + xp] - in[zy + xm];
                const double gy = in[zx + yp] - in[zx + ym];
                const double gz = in[yx + zp] - in[yx + zm];
                out[row + static_cast<std::size_t>(x)] = std::sqrt(gx * gx + gy * gy + gz * gz);
            }
        }
    }
    return Volume(d, v.spacing(), std::move(out));
}

Volume branch_gradient_map(const Volume& v) { return normalize_intensity(gradient_map(normalize_intensity(v))); }

}  // namespace gradreg
