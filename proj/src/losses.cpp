#include "gradreg/losses.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>

#include "gradreg/ops.hpp"

namespace gradreg {

void MindParams::validate() const {
    if (offsets.empty()) throw std::invalid_argument("MIND neighbourhood must be non-empty");
    if (patch_radius < 0) throw std::invalid_argument("MIND patch radius must be >= 0");
    if (!(variance_floor > 0.0)) throw std::invalid_argument("MIND variance floor must be > 0");
}

void LossWeights::validate() const {
    if (!(alpha >= 0.0 && beta >= 0.0 && gamma >= 0.0)) throw std::invalid_argument("loss weights must be >= 0");
}

namespace {

int clampi(int v, int n) { return v < 0 ? 0 : (v >= n ? n - 1 : v); }

// Patch distances live on a grid padded by the patch radius on every side, so
// each D_r(x) is a plain box sum over that grid.
struct MindPass {
    Dims dims;
    Dims padded;
    int radius = 0;
    std::size_t patch = 0;
    Tensor dist;                    // D_r, |R| channels
    std::vector<double> variance;   // V(x) after clamping
    std::vector<unsigned char> floored;
    Tensor features;                // M_r
};

void check_extent(const Dims& d, const MindParams& params) {
    params.validate();
    const int need = params.min_extent();
    if (d.nx < need || d.ny < need || d.nz < need) {
        throw std::invalid_argument("volume " + to_string(d) + " too small for MIND patch radius " +
                                    std::to_string(params.patch_radius) + " (each axis needs " +
                                    std::to_string(need) + ")");
    }
}

// S_r(q) = (I(c(z)) - I(c(z + r)))^2 with z = q - radius, c = clamp to grid.
std::vector<double> squared_shift_difference(const double* img, const Dims& d, const Dims& pd, int radius,
                                             const std::array<int, 3>& r) {
    std::vector<double> s(pd.size());
    for (int qz = 0; qz < pd.nz; ++qz) {
        const int z = qz - radius;
        const int za = clampi(z, d.nz), zb = clampi(z + r[2], d.nz);
        for (int qy = 0; qy < pd.ny; ++qy) {
            const int y = qy - radius;
            const int ya = clampi(y, d.ny), yb = clampi(y + r[1], d.ny);
            for (int qx = 0; qx < pd.nx; ++qx) {
                const int x = qx - radius;
                const double diff = img[d.index(clampi(x, d.nx), ya, za)] - img[d.index(clampi(x + r[0], d.nx), yb, zb)];
                s[pd.index(qx, qy, qz)] = diff * diff;
            }
        }
    }
    return s;
}

MindPass mind_forward(const double* img, const Dims& d, const MindParams& params) {
    check_extent(d, params);
    MindPass p;
    p.dims = d;
    p.radius = params.patch_radius;
    const int rad = p.radius;
    p.padded = Dims{d.nx + 2 * rad, d.ny + 2 * rad, d.nz + 2 * rad};
    const int width = 2 * rad + 1;
    p.patch = static_cast<std::size_t>(width) * width * width;
    const int nr = static_cast<int>(params.offsets.size());
    const std::size_t n = d.size();

    p.dist = Tensor(Shape{nr, d});
    for (int ri = 0; ri < nr; ++ri) {
        const std::vector<double> s = squared_shift_difference(img, d, p.padded, rad, params.offsets[ri]);
        auto dr = p.dist.channel(ri);
        const double inv_patch = 1.0 / static_cast<double>(p.patch);
        for (int z = 0; z < d.nz; ++z) {
            for (int y = 0; y < d.ny; ++y) {
                for (int x = 0; x < d.nx; ++x) {
                    double acc = 0.0;
                    for (int pz = 0; pz < width; ++pz) {
                        for (int py = 0; py < width; ++py) {
                            const double* row = &s[p.padded.index(x, y + py, z + pz)];
                            for (int px = 0; px < width; ++px) acc += row[px];
                        }
                    }
                    dr[d.index(x, y, z)] = acc * inv_patch;
                }
            }
        }
    }

    p.variance.assign(n, 0.0);
    p.floored.assign(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (int ri = 0; ri < nr; ++ri) acc += p.dist.channel(ri)[i];
        const double mean = acc / static_cast<double>(nr);
        if (mean > params.variance_floor) {
            p.variance[i] = mean;
        } else {
            p.variance[i] = params.variance_floor;
            p.floored[i] = 1;
        }
    }

    p.features = Tensor(Shape{nr, d});
    for (int ri = 0; ri < nr; ++ri) {
        auto dr = p.dist.channel(ri);
        auto mr = p.features.channel(ri);
        for (std::size_t i = 0; i < n; ++i) mr[i] = std::exp(-dr[i] / p.variance[i]);
    }
    return p;
}

// Accumulates d(loss)/d(image) given d(loss)/d(features).
void mind_backward(const MindPass& p, const double* img, const MindParams& params, const Tensor& gfeat,
                   double* gimg) {
    const Dims& d = p.dims;
    const Dims& pd = p.padded;
    const std::size_t n = d.size();
    const int nr = static_cast<int>(params.offsets.size());
    const int rad = p.radius;
    const int width = 2 * rad + 1;
    const double inv_patch = 1.0 / static_cast<double>(p.patch);

    // d/dD_s = -G_s M_s / V + [V not floored] * (1/|R|) * sum_r G_r M_r D_r / V^2
    std::vector<double> shared(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        if (p.floored[i]) continue;
        double acc = 0.0;
        for (int ri = 0; ri < nr; ++ri) {
            acc += gfeat.channel(ri)[i] * p.features.channel(ri)[i] * p.dist.channel(ri)[i];
        }
        shared[i] = acc / (p.variance[i] * p.variance[i] * static_cast<double>(nr));
    }

    std::vector<double> gs(pd.size());
    for (int ri = 0; ri < nr; ++ri) {
        auto gm = gfeat.channel(ri);
        auto mr = p.features.channel(ri);
        std::fill(gs.begin(), gs.end(), 0.0);
        for (int z = 0; z < d.nz; ++z) {
            for (int y = 0; y < d.ny; ++y) {
                for (int x = 0; x < d.nx; ++x) {
                    const std::size_t i = d.index(x, y, z);
                    const double gd = (-gm[i] * mr[i] / p.variance[i] + shared[i]) * inv_patch;
                    if (gd == 0.0) continue;
                    for (int pz = 0; pz < width; ++pz) {
                        for (int py = 0; py < width; ++py) {
                            double* row = &gs[pd.index(x, y + py, z + pz)];
                            for (int px = 0; px < width; ++px) row[px] += gd;
                        }
                    }
                }
            }
        }
        const auto& r = params.offsets[ri];
        for (int qz = 0; qz < pd.nz; ++qz) {
            const int z = qz - rad;
            const int za = clampi(z, d.nz), zb = clampi(z + r[2], d.nz);
            for (int qy = 0; qy < pd.ny; ++qy) {
                const int y = qy - rad;
                const int ya = clampi(y, d.ny), yb = clampi(y + r[1], d.ny);
                for (int qx = 0; qx < pd.nx; ++qx) {
                    const double g = gs[pd.index(qx, qy, qz)];
                    if (g == 0.0) continue;
                    const int x = qx - rad;
                    const std::size_t ia = d.index(clampi(x, d.nx), ya, za);
                    const std::size_t ib = d.index(clampi(x + r[0], d.nx), yb, zb);
                    const double t = 2.0 * (img[ia] - img[ib]) * g;
                    gimg[ia] += t;
                    gimg[ib] -= t;
                }
            }
        }
    }
}

double mean_abs_difference(const Tensor& a, const Tensor& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += std::abs(a[i] - b[i]);
    return acc / static_cast<double>(a.size());
}

}  // namespace

MindFeatures mind_features(const Volume& v, const MindParams& params) {
    return mind_forward(v.data().data(), v.dims(), params).features;
}

double mind_loss(const Volume& warped, const Volume& fixed, const MindParams& params) {
    if (warped.dims() != fixed.dims()) {
        throw DimensionMismatch("mind_loss: " + to_string(warped.dims()) + " vs " + to_string(fixed.dims()));
    }
    return mean_abs_difference(mind_features(warped, params), mind_features(fixed, params));
}

Var mind_loss(Tape& tape, Var warped, const MindFeatures& fixed_features, const MindParams& params) {
    const Tensor& w = tape.value(warped);
    if (w.channels() != 1) throw std::invalid_argument("mind_loss expects a single-channel image");
    if (fixed_features.dims() != w.dims() ||
        fixed_features.channels() != static_cast<int>(params.offsets.size())) {
        throw DimensionMismatch("mind_loss: fixed features " + to_string(fixed_features.shape()) +
                                " do not match image " + to_string(w.shape()));
    }
    auto pass = std::make_shared<MindPass>(mind_forward(w.data().data(), w.dims(), params));
    const double loss = mean_abs_difference(pass->features, fixed_features);
    // Only the sign pattern of the difference is needed going backwards.
    auto sign = std::make_shared<std::vector<signed char>>(pass->features.size());
    for (std::size_t i = 0; i < sign->size(); ++i) {
        const double diff = pass->features[i] - fixed_features[i];
        (*sign)[i] = diff > 0.0 ? 1 : (diff < 0.0 ? -1 : 0);
    }
    return tape.record("mind_loss", Tensor::scalar(loss), {warped},
                       [&tape, warped, pass, sign, params](const Tensor& gy, std::span<Tensor* const> gins) {
                           const double scale = gy[0] / static_cast<double>(sign->size());
                           Tensor gfeat(pass->features.shape());
                           for (std::size_t i = 0; i < sign->size(); ++i) gfeat[i] = scale * (*sign)[i];
                           mind_backward(*pass, tape.value(warped).data().data(), params, gfeat,
                                         gins[0]->data().data());
                       });
}

// ---------------------------------------------------------------------------
// Smoothness

namespace {

void check_smoothness_dims(const Dims& d) {
    if (d.nx < 2 || d.ny < 2 || d.nz < 2) {
        throw std::invalid_argument("smoothness_loss needs at least 2 voxels per axis, got " + to_string(d));
    }
}

// Forward difference of channel c along `axis` at voxel (x, y, z); zero on the last slice.
inline double forward_diff(const double* u, const Dims& d, std::size_t n, int c, int axis, int x, int y, int z) {
    const std::size_t base = static_cast<std::size_t>(c) * n;
    const std::size_t i = d.index(x, y, z);
    switch (axis) {
        case 0:
            return x + 1 < d.nx ? u[base + i + 1] - u[base + i] : 0.0;
        case 1:
            return y + 1 < d.ny ? u[base + i + static_cast<std::size_t>(d.nx)] - u[base + i] : 0.0;
        default:
            return z + 1 < d.nz ? u[base + i + static_cast<std::size_t>(d.nx) * d.ny] - u[base + i] : 0.0;
    }
}

inline std::size_t axis_stride(const Dims& d, int axis) {
    return axis == 0 ? 1 : (axis == 1 ? static_cast<std::size_t>(d.nx) : static_cast<std::size_t>(d.nx) * d.ny);
}

double smoothness_value(const double* u, const Dims& d, SmoothnessMode mode) {
    const std::size_t n = d.size();
    double total = 0.0;
    for (int z = 0; z < d.nz; ++z) {
        for (int y = 0; y < d.ny; ++y) {
            for (int x = 0; x < d.nx; ++x) {
                double sq = 0.0;
                for (int c = 0; c < 3; ++c) {
                    for (int a = 0; a < 3; ++a) {
                        const double g = forward_diff(u, d, n, c, a, x, y, z);
                        sq += g * g;
                    }
                }
                total += mode == SmoothnessMode::kL2Sq ? sq : std::sqrt(sq);
            }
        }
    }
    return total / static_cast<double>(n);
}

}  // namespace

double smoothness_loss(const DeformationField& f, SmoothnessMode mode) {
    check_smoothness_dims(f.dims());
    return smoothness_value(f.disp().data(), f.dims(), mode);
}

Var smoothness_loss(Tape& tape, Var field, SmoothnessMode mode) {
    const Tensor& f = tape.value(field);
    if (f.channels() != 3) throw std::invalid_argument("smoothness_loss expects a 3-channel field");
    const Dims d = f.dims();
    check_smoothness_dims(d);
    const double value = smoothness_value(f.data().data(), d, mode);
    return tape.record(
        mode == SmoothnessMode::kL2Sq ? "smoothness_l2sq" : "smoothness_l2", Tensor::scalar(value), {field},
        [&tape, field, d, mode](const Tensor& gy, std::span<Tensor* const> gins) {
            const double* u = tape.value(field).data().data();
            double* gu = gins[0]->data().data();
            const std::size_t n = d.size();
            const double scale = gy[0] / static_cast<double>(n);
            double g[3][3];
            for (int z = 0; z < d.nz; ++z) {
                for (int y = 0; y < d.ny; ++y) {
                    for (int x = 0; x < d.nx; ++x) {
                        double sq = 0.0;
                        for (int c = 0; c < 3; ++c) {
                            for (int a = 0; a < 3; ++a) {
                                g[c][a] = forward_diff(u, d, n, c, a, x, y, z);
                                sq += g[c][a] * g[c][a];
                            }
                        }
                        double factor = 0.0;
                        if (mode == SmoothnessMode::kL2Sq) {
                            factor = 2.0 * scale;
                        } else if (sq > 0.0) {
                            factor = scale / std::sqrt(sq);
                        }
                        if (factor == 0.0) continue;
                        const std::size_t i = d.index(x, y, z);
                        const int pos[3] = {x, y, z};
                        for (int c = 0; c < 3; ++c) {
                            const std::size_t base = static_cast<std::size_t>(c) * n + i;
                            for (int a = 0; a < 3; ++a) {
                                if (pos[a] + 1 >= d[a]) continue;
                                const double t = factor * g[c][a];
                                gu[base + axis_stride(d, a)] += t;
                                gu[base] -= t;
                            }
                        }
                    }
                }
            }
        });
}

// ---------------------------------------------------------------------------

LossReport make_report(double isim, double gsim, double igreg, double greg, const LossWeights& w) {
    LossReport r;
    r.isim = isim;
    r.gsim = gsim;
    r.igreg = igreg;
    r.greg = greg;
    r.total = (isim + w.alpha * gsim) + (w.gamma * igreg + w.beta * greg);
    return r;
}

LossReport total_loss(const Volume& warped_ct, const Volume& fixed_mr, const Volume& warped_gct,
                      const Volume& fixed_gmr, const DeformationField& f_ig, const DeformationField& f_g,
                      const LossWeights& w, const MindParams& params, SmoothnessMode mode) {
    w.validate();
    const Dims d = warped_ct.dims();
    if (fixed_mr.dims() != d || warped_gct.dims() != d || fixed_gmr.dims() != d || f_ig.dims() != d ||
        f_g.dims() != d) {
        throw DimensionMismatch("total_loss: all inputs must share dims " + to_string(d));
    }
    return make_report(mind_loss(warped_ct, fixed_mr, params), mind_loss(warped_gct, fixed_gmr, params),
                       smoothness_loss(f_ig, mode), smoothness_loss(f_g, mode), w);
}

LossNodes combine_losses(Tape& tape, Var isim, Var gsim, Var igreg, Var greg, const LossWeights& w) {
    w.validate();
    LossNodes nodes{isim, gsim, igreg, greg, {}};
    Var sim = isim;
    if (gsim.valid()) sim = add(tape, isim, scale(tape, gsim, w.alpha));
    Var reg = scale(tape, igreg, w.gamma);
    if (greg.valid()) reg = add(tape, reg, scale(tape, greg, w.beta));
    nodes.total = add(tape, sim, reg);
    return nodes;
}

LossReport report_from(const Tape& tape, const LossNodes& nodes, const LossWeights& w) {
    auto get = [&tape](Var v) { return v.valid() ? tape.value(v)[0] : 0.0; };
    return make_report(get(nodes.isim), get(nodes.gsim), get(nodes.igreg), get(nodes.greg), w);
}

}  // namespace gradreg
