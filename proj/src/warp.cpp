#include "gradreg/warp.hpp"

#include <algorithm>
#include <cmath>

namespace gradreg {

DeformationField::DeformationField(Dims dims, std::vector<double> disp) : dims_(dims), disp_(std::move(disp)) {
    if (!dims_.positive() || disp_.size() != 3 * dims_.size()) {
        throw std::invalid_argument("DeformationField needs 3 * " + std::to_string(dims_.size()) + " values for " +
                                    to_string(dims_));
    }
    for (double v : disp_) {
        if (!std::isfinite(v)) throw std::invalid_argument("DeformationField holds a non-finite displacement");
    }
}

DeformationField DeformationField::from_tensor(const Tensor& t) {
    if (t.channels() != 3) throw std::invalid_argument("deformation tensor must have 3 channels");
    return DeformationField(t.dims(), t.storage());
}

Tensor DeformationField::to_tensor() const { return Tensor(Shape{3, dims_}, disp_); }

DeformationField identity_field(Dims dims) { return DeformationField(dims, std::vector<double>(3 * dims.size(), 0.0)); }

namespace {

// Lower corner, fractional offset and clamp derivative along one axis.
struct AxisSample {
    int i0;
    int i1;
    double t;
    double dclamp;  // d(clamped coordinate) / d(coordinate)
};

AxisSample axis_sample(double c, int n) {
    AxisSample s{};
    const double hi = static_cast<double>(n - 1);
    s.dclamp = (c >= 0.0 && c <= hi) ? 1.0 : 0.0;
    const double cc = std::clamp(c, 0.0, hi);
    if (n == 1) {
        s.i0 = s.i1 = 0;
        s.t = 0.0;
        return s;
    }
    int i0 = static_cast<int>(std::floor(cc));
    i0 = std::min(i0, n - 2);
    s.i0 = i0;
    s.i1 = i0 + 1;
    s.t = cc - static_cast<double>(i0);
    return s;
}

struct Corners {
    std::size_t idx[8];
    double w[8];
    AxisSample ax[3];
};

Corners corners(const Dims& d, double px, double py, double pz) {
    Corners c{};
    c.ax[0] = axis_sample(px, d.nx);
    c.ax[1] = axis_sample(py, d.ny);
    c.ax[2] = axis_sample(pz, d.nz);
    int k = 0;
    for (int bz = 0; bz < 2; ++bz) {
        const int z = bz ? c.ax[2].i1 : c.ax[2].i0;
        const double wz = bz ? c.ax[2].t : 1.0 - c.ax[2].t;
        for (int by = 0; by < 2; ++by) {
            const int y = by ? c.ax[1].i1 : c.ax[1].i0;
            const double wy = by ? c.ax[1].t : 1.0 - c.ax[1].t;
            for (int bx = 0; bx < 2; ++bx) {
                const int x = bx ? c.ax[0].i1 : c.ax[0].i0;
                const double wx = bx ? c.ax[0].t : 1.0 - c.ax[0].t;
                c.idx[k] = d.index(x, y, z);
                c.w[k] = wx * wy * wz;
                ++k;
            }
        }
    }
    return c;
}

double blend(const Corners& c, const double* v) {
    double acc = 0.0;
    for (int k = 0; k < 8; ++k) acc += c.w[k] * v[c.idx[k]];
    return acc;
}

// d(sample)/d(point) for each axis, clamp derivative included.
std::array<double, 3> blend_gradient(const Corners& c, const double* v) {
    std::array<double, 3> g{0.0, 0.0, 0.0};
    const double tx = c.ax[0].t, ty = c.ax[1].t, tz = c.ax[2].t;
    int k = 0;
    for (int bz = 0; bz < 2; ++bz) {
        const double wz = bz ? tz : 1.0 - tz;
        const double sz = bz ? 1.0 : -1.0;
        for (int by = 0; by < 2; ++by) {
            const double wy = by ? ty : 1.0 - ty;
            const double sy = by ? 1.0 : -1.0;
            for (int bx = 0; bx < 2; ++bx) {
                const double wx = bx ? tx : 1.0 - tx;
                const double sx = bx ? 1.0 : -1.0;
                const double val = v[c.idx[k]];
                g[0] += sx * wy * wz * val;
                g[1] += wx * sy * wz * val;
                g[2] += wx * wy * sz * val;
                ++k;
            }
        }
    }
    // Degenerate single-voxel axes carry no slope.
    for (int a = 0; a < 3; ++a) {
        if (c.ax[a].i0 == c.ax[a].i1) g[a] = 0.0;
        g[a] *= c.ax[a].dclamp;
    }
    return g;
}

void check_field_dims(const Dims& vd, const Dims& fd) {
    if (vd != fd) throw DimensionMismatch("warp: volume " + to_string(vd) + " vs field " + to_string(fd));
}

}  // namespace

double sample_trilinear(const Volume& v, const std::array<double, 3>& point) {
    const Corners c = corners(v.dims(), point[0], point[1], point[2]);
    return blend(c, v.data().data());
}

Volume warp_trilinear(const Volume& v, const DeformationField& f) {
    check_field_dims(v.dims(), f.dims());
    const Dims d = v.dims();
    const std::size_t n = d.size();
    const double* src = v.data().data();
    const double* u = f.disp().data();
    std::vector<double> out(n);
    for (int z = 0; z < d.nz; ++z) {
        for (int y = 0; y < d.ny; ++y) {
            for (int x = 0; x < d.nx; ++x) {
                const std::size_t i = d.index(x, y, z);
                const Corners c = corners(d, x + u[i], y + u[n + i], z + u[2 * n + i]);
                out[i] = blend(c, src);
            }
        }
    }
    return Volume(d, v.spacing(), std::move(out));
}

LabelMask warp_nearest(const LabelMask& m, const DeformationField& f) {
    check_field_dims(m.dims(), f.dims());
    const Dims d = m.dims();
    const std::size_t n = d.size();
    const double* u = f.disp().data();
    auto nearest = [](double c, int len) {
        const double r = std::nearbyint(std::clamp(c, 0.0, static_cast<double>(len - 1)));
        return static_cast<int>(r);
    };
    std::vector<std::int32_t> out(n);
    for (int z = 0; z < d.nz; ++z) {
        for (int y = 0; y < d.ny; ++y) {
            for (int x = 0; x < d.nx; ++x) {
                const std::size_t i = d.index(x, y, z);
                out[i] = m.at(nearest(x + u[i], d.nx), nearest(y + u[n + i], d.ny), nearest(z + u[2 * n + i], d.nz));
            }
        }
    }
    return LabelMask(d, std::move(out), m.spacing());
}

Var warp(Tape& tape, Var volume, Var field) {
    const Tensor& v = tape.value(volume);
    const Tensor& f = tape.value(field);
    if (v.channels() != 1) throw std::invalid_argument("warp expects a single-channel volume");
    if (f.channels() != 3) throw std::invalid_argument("warp expects a 3-channel field");
    check_field_dims(v.dims(), f.dims());
    const Dims d = v.dims();
    const std::size_t n = d.size();

    Tensor out(Shape{1, d});
    {
        const double* src = v.data().data();
        const double* u = f.data().data();
        for (int z = 0; z < d.nz; ++z) {
            for (int y = 0; y < d.ny; ++y) {
                for (int x = 0; x < d.nx; ++x) {
                    const std::size_t i = d.index(x, y, z);
                    out[i] = blend(corners(d, x + u[i], y + u[n + i], z + u[2 * n + i]), src);
                }
            }
        }
    }

    return tape.record(
        "warp", std::move(out), {volume, field},
        [&tape, volume, field, d, n](const Tensor& gout, std::span<Tensor* const> gins) {
            const double* src = tape.value(volume).data().data();
            const double* u = tape.value(field).data().data();
            Tensor* gv = gins[0];
            Tensor* gf = gins[1];
            for (int z = 0; z < d.nz; ++z) {
                for (int y = 0; y < d.ny; ++y) {
                    for (int x = 0; x < d.nx; ++x) {
                        const std::size_t i = d.index(x, y, z);
                        const double g = gout[i];
                        if (g == 0.0) continue;
                        const Corners c = corners(d, x + u[i], y + u[n + i], z + u[2 * n + i]);
                        if (gv != nullptr) {
                            for (int k = 0; k < 8; ++k) (*gv)[c.idx[k]] += g * c.w[k];
                        }
                        if (gf != nullptr) {
                            const auto dp = blend_gradient(c, src);
                            (*gf)[i] += g * dp[0];
                            (*gf)[n + i] += g * dp[1];
                            (*gf)[2 * n + i] += g * dp[2];
                        }
                    }
                }
            }
        });
}

void save_field(const DeformationField& f, const std::filesystem::path& path, Spacing spacing) {
    save_raw(RawImage{f.dims(), spacing, 3, f.disp()}, path);
}

DeformationField load_field(const std::filesystem::path& path) {
    RawImage img = load_raw(path);
    if (img.channels != 3) {
        throw UnsupportedFeature("expected a 3-channel field, found " + std::to_string(img.channels) + " channels");
    }
    return DeformationField(img.dims, std::move(img.data));
}

}  // namespace gradreg
