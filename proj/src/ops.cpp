#include "gradreg/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace gradreg {

Shape kernel_shape(int out_channels, int in_channels, int k) { return Shape{out_channels * in_channels, Dims{k, k, k}}; }

Dims conv_output_dims(Dims in, int stride) {
    auto ceil_div = [stride](int n) { return (n + stride - 1) / stride; };
    return Dims{ceil_div(in.nx), ceil_div(in.ny), ceil_div(in.nz)};
}

namespace {

// Output index range [lo, hi) for which stride * o + koff lands inside [0, n_in).
struct Range {
    int lo;
    int hi;
};

Range valid_range(int n_in, int n_out, int stride, int koff) {
    // smallest o with stride*o + koff >= 0
    int lo = koff >= 0 ? 0 : (-koff + stride - 1) / stride;
    // largest o with stride*o + koff <= n_in - 1
    const int top = n_in - 1 - koff;
    int hi = top < 0 ? 0 : top / stride + 1;
    hi = std::min(hi, n_out);
    lo = std::min(lo, hi);
    return {lo, hi};
}

struct ConvGeometry {
    int in_ch;
    int out_ch;
    int k;
    int pad;
    int stride;
    Dims in;
    Dims out;
};

// Visits every (output row, input row, weight) triple of the convolution in a
// fixed order: oc, ic, kz, ky, kx, oz, oy. `fn` receives the weight index,
// channel offsets, row offsets and the valid x range.
template <class Fn>
void for_each_tap(const ConvGeometry& g, Fn&& fn) {
    const std::size_t in_plane = g.in.size();
    const std::size_t out_plane = g.out.size();
    for (int oc = 0; oc < g.out_ch; ++oc) {
        for (int ic = 0; ic < g.in_ch; ++ic) {
            for (int kz = 0; kz < g.k; ++kz) {
                const Range rz = valid_range(g.in.nz, g.out.nz, g.stride, kz - g.pad);
                for (int ky = 0; ky < g.k; ++ky) {
                    const Range ry = valid_range(g.in.ny, g.out.ny, g.stride, ky - g.pad);
                    for (int kx = 0; kx < g.k; ++kx) {
                        const Range rx = valid_range(g.in.nx, g.out.nx, g.stride, kx - g.pad);
                        if (rx.lo >= rx.hi) continue;
                        const std::size_t widx =
                            (static_cast<std::size_t>(oc * g.in_ch + ic) * g.k + kz) * g.k * g.k +
                            static_cast<std::size_t>(ky) * g.k + kx;
                        for (int oz = rz.lo; oz < rz.hi; ++oz) {
                            const int iz = g.stride * oz + kz - g.pad;
                            for (int oy = ry.lo; oy < ry.hi; ++oy) {
                                const int iy = g.stride * oy + ky - g.pad;
                                const std::size_t out_row = oc * out_plane + g.out.index(0, oy, oz);
                                const std::size_t in_row = ic * in_plane + g.in.index(0, iy, iz);
                                fn(widx, out_row, in_row, rx.lo, rx.hi, kx - g.pad);
                            }
                        }
                    }
                }
            }
        }
    }
}

}  // namespace

Var conv3d(Tape& tape, Var input, Var weights, Var bias, int stride) {
    const Tensor& x = tape.value(input);
    const Tensor& w = tape.value(weights);
    const Tensor& b = tape.value(bias);
    if (stride != 1 && stride != 2) throw std::invalid_argument("conv3d stride must be 1 or 2");
    const int k = w.dims().nx;
    if (k % 2 == 0 || w.dims().ny != k || w.dims().nz != k) {
        throw std::invalid_argument("conv3d kernel must be cubic with odd size");
    }
    const int out_ch = b.channels();
    if (b.dims() != Dims{1, 1, 1}) throw std::invalid_argument("conv3d bias must be one scalar per channel");
    if (w.channels() != out_ch * x.channels()) {
        throw std::invalid_argument("conv3d channel mismatch: kernel " + to_string(w.shape()) + " vs input " +
                                    to_string(x.shape()) + " and " + std::to_string(out_ch) + " outputs");
    }
    const ConvGeometry g{x.channels(), out_ch, k, k / 2, stride, x.dims(), conv_output_dims(x.dims(), stride)};

    Tensor y(Shape{out_ch, g.out});
    for (int oc = 0; oc < out_ch; ++oc) {
        auto ch = y.channel(oc);
        std::fill(ch.begin(), ch.end(), b[oc]);
    }
    {
        double* yd = y.data().data();
        const double* xd = x.data().data();
        const double* wd = w.data().data();
        for_each_tap(g, [&](std::size_t widx, std::size_t orow, std::size_t irow, int lo, int hi, int dx) {
            const double wv = wd[widx];
            if (wv == 0.0) return;
            double* __restrict yr = yd + orow;
            const double* __restrict xr = xd + irow;
            if (stride == 1) {
                for (int ox = lo; ox < hi; ++ox) yr[ox] += wv * xr[ox + dx];
            } else {
                for (int ox = lo; ox < hi; ++ox) yr[ox] += wv * xr[2 * ox + dx];
            }
        });
    }

    return tape.record(
        "conv3d", std::move(y), {input, weights, bias},
        [&tape, input, weights, g](const Tensor& gy, std::span<Tensor* const> gins) {
            const double* xd = tape.value(input).data().data();
            const double* wd = tape.value(weights).data().data();
            const double* gyd = gy.data().data();
            const int s = g.stride;
            if (Tensor* gx = gins[0]) {
                double* gxd = gx->data().data();
                for_each_tap(g, [&](std::size_t widx, std::size_t orow, std::size_t irow, int lo, int hi, int dx) {
                    const double wv = wd[widx];
                    if (wv == 0.0) return;
                    const double* __restrict gr = gyd + orow;
                    double* __restrict xr = gxd + irow;
                    for (int ox = lo; ox < hi; ++ox) xr[s * ox + dx] += wv * gr[ox];
                });
            }
            if (Tensor* gw = gins[1]) {
                double* gwd = gw->data().data();
                for_each_tap(g, [&](std::size_t widx, std::size_t orow, std::size_t irow, int lo, int hi, int dx) {
                    const double* __restrict gr = gyd + orow;
                    const double* __restrict xr = xd + irow;
                    double acc = 0.0;
                    for (int ox = lo; ox < hi; ++ox) acc += gr[ox] * xr[s * ox + dx];
                    gwd[widx] += acc;
                });
            }
            if (Tensor* gb = gins[2]) {
                for (int oc = 0; oc < g.out_ch; ++oc) {
                    double acc = 0.0;
                    for (double v : gy.channel(oc)) acc += v;
                    (*gb)[oc] += acc;
                }
            }
        });
}

Var upsample_nearest2x(Tape& tape, Var input) {
    const Tensor& x = tape.value(input);
    const Dims in = x.dims();
    const Dims out{in.nx * 2, in.ny * 2, in.nz * 2};
    const int channels = x.channels();
    Tensor y(Shape{channels, out});
    for (int c = 0; c < channels; ++c) {
        auto xc = x.channel(c);
        auto yc = y.channel(c);
        for (int z = 0; z < out.nz; ++z) {
            for (int yy = 0; yy < out.ny; ++yy) {
                for (int xx = 0; xx < out.nx; ++xx) {
                    yc[out.index(xx, yy, z)] = xc[in.index(xx / 2, yy / 2, z / 2)];
                }
            }
        }
    }
    return tape.record("upsample_nearest2x", std::move(y), {input},
                       [in, out, channels](const Tensor& gy, std::span<Tensor* const> gins) {
                           Tensor* gx = gins[0];
                           for (int c = 0; c < channels; ++c) {
                               auto gxc = gx->channel(c);
                               auto gyc = gy.channel(c);
                               for (int z = 0; z < out.nz; ++z) {
                                   for (int yy = 0; yy < out.ny; ++yy) {
                                       for (int xx = 0; xx < out.nx; ++xx) {
                                           gxc[in.index(xx / 2, yy / 2, z / 2)] += gyc[out.index(xx, yy, z)];
                                       }
                                   }
                               }
                           }
                       });
}

double sigmoid_value(double x) {
    // Kept inside the open interval (0, 1) so gates never fully close or open.
    constexpr double lo = std::numeric_limits<double>::min();
    constexpr double hi = 1.0 - std::numeric_limits<double>::epsilon() / 2;
    const double s = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    return std::clamp(s, lo, hi);
}

Var activation(Tape& tape, Var input, Activation kind) {
    const Tensor& x = tape.value(input);
    Tensor y(x.shape());
    if (kind == Activation::kLeakyRelu) {
        for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : kLeakySlope * x[i];
        return tape.record("leaky_relu", std::move(y), {input},
                           [&tape, input](const Tensor& gy, std::span<Tensor* const> gins) {
                               const Tensor& xv = tape.value(input);
                               Tensor& gx = *gins[0];
                               for (std::size_t i = 0; i < xv.size(); ++i) {
                                   gx[i] += xv[i] > 0.0 ? gy[i] : kLeakySlope * gy[i];
                               }
                           });
    }
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = sigmoid_value(x[i]);
    return tape.record("sigmoid", std::move(y), {input},
                       [&tape, input](const Tensor& gy, std::span<Tensor* const> gins) {
                           const Tensor& xv = tape.value(input);
                           Tensor& gx = *gins[0];
                           for (std::size_t i = 0; i < xv.size(); ++i) {
                               const double s = sigmoid_value(xv[i]);
                               gx[i] += gy[i] * s * (1.0 - s);
                           }
                       });
}

Var concat_channels(Tape& tape, Var a, Var b) {
    const Tensor& ta = tape.value(a);
    const Tensor& tb = tape.value(b);
    if (ta.dims() != tb.dims()) {
        throw DimensionMismatch("concat_channels: " + to_string(ta.shape()) + " vs " + to_string(tb.shape()));
    }
    const int ca = ta.channels();
    Tensor y(Shape{ca + tb.channels(), ta.dims()});
    std::copy(ta.storage().begin(), ta.storage().end(), y.storage().begin());
    std::copy(tb.storage().begin(), tb.storage().end(), y.storage().begin() + static_cast<std::ptrdiff_t>(ta.size()));
    const std::size_t split = ta.size();
    return tape.record("concat_channels", std::move(y), {a, b},
                       [split](const Tensor& gy, std::span<Tensor* const> gins) {
                           if (Tensor* ga = gins[0]) {
                               for (std::size_t i = 0; i < split; ++i) (*ga)[i] += gy[i];
                           }
                           if (Tensor* gb = gins[1]) {
                               for (std::size_t i = 0; i < gb->size(); ++i) (*gb)[i] += gy[split + i];
                           }
                       });
}

Var slice_channels(Tape& tape, Var input, int begin, int count) {
    const Tensor& x = tape.value(input);
    if (begin < 0 || count <= 0 || begin + count > x.channels()) {
        throw std::invalid_argument("slice_channels range out of bounds for " + to_string(x.shape()));
    }
    const std::size_t plane = x.dims().size();
    const std::size_t offset = static_cast<std::size_t>(begin) * plane;
    Tensor y(Shape{count, x.dims()});
    std::copy_n(x.storage().begin() + static_cast<std::ptrdiff_t>(offset), y.size(), y.storage().begin());
    return tape.record("slice_channels", std::move(y), {input},
                       [offset](const Tensor& gy, std::span<Tensor* const> gins) {
                           Tensor& gx = *gins[0];
                           for (std::size_t i = 0; i < gy.size(); ++i) gx[offset + i] += gy[i];
                       });
}

Var elementwise(Tape& tape, Var a, Var b, Elementwise kind) {
    const Tensor& ta = tape.value(a);
    const Tensor& tb = tape.value(b);
    if (ta.shape() != tb.shape()) {
        throw DimensionMismatch("elementwise: " + to_string(ta.shape()) + " vs " + to_string(tb.shape()));
    }
    Tensor y(ta.shape());
    if (kind == Elementwise::kAdd) {
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = ta[i] + tb[i];
        return tape.record("add", std::move(y), {a, b}, [](const Tensor& gy, std::span<Tensor* const> gins) {
            for (Tensor* g : gins) {
                if (g == nullptr) continue;
                for (std::size_t i = 0; i < gy.size(); ++i) (*g)[i] += gy[i];
            }
        });
    }
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = ta[i] * tb[i];
    return tape.record("mul", std::move(y), {a, b},
                       [&tape, a, b](const Tensor& gy, std::span<Tensor* const> gins) {
                           const Tensor& va = tape.value(a);
                           const Tensor& vb = tape.value(b);
                           if (Tensor* ga = gins[0]) {
                               for (std::size_t i = 0; i < gy.size(); ++i) (*ga)[i] += gy[i] * vb[i];
                           }
                           if (Tensor* gb = gins[1]) {
                               for (std::size_t i = 0; i < gy.size(); ++i) (*gb)[i] += gy[i] * va[i];
                           }
                       });
}

Var scale(Tape& tape, Var input, double factor) {
    const Tensor& x = tape.value(input);
    Tensor y(x.shape());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = factor * x[i];
    return tape.record("scale", std::move(y), {input}, [factor](const Tensor& gy, std::span<Tensor* const> gins) {
        Tensor& gx = *gins[0];
        for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += factor * gy[i];
    });
}

Var sum(Tape& tape, Var input) {
    const Tensor& x = tape.value(input);
    double acc = 0.0;
    for (double v : x.data()) acc += v;
    return tape.record("sum", Tensor::scalar(acc), {input}, [](const Tensor& gy, std::span<Tensor* const> gins) {
        Tensor& gx = *gins[0];
        const double g = gy[0];
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
    });
}

}  // namespace gradreg
