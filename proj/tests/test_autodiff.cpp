#include "doctest.h"

#include <cmath>

#include "gradreg/fd_check.hpp"
#include "gradreg/ops.hpp"
#include "support/test_support.hpp"

using namespace gradreg;

namespace {

Tensor random_tensor(std::uint64_t seed, Shape shape, double lo = -1.0, double hi = 1.0) {
    testing::CounterRng rng(seed, 5);
    Tensor t(shape);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

Tensor bias_tensor(int channels, double v = 0.0) { return Tensor(Shape{channels, Dims{1, 1, 1}}, v); }

// Probes d/d(inputs[k]) of sum(build(...) * weights) for every input.
void check_op_gradients(const std::function<Var(Tape&, const std::vector<Var>&)>& build, std::vector<Tensor> inputs,
                        std::uint64_t seed, FdOptions opts = {}) {
    Tensor out_shape_probe;
    {
        Tape t;
        std::vector<Var> vs;
        for (const auto& in : inputs) vs.push_back(t.leaf(in));
        out_shape_probe = t.value(build(t, vs));
    }
    const Tensor weights = random_tensor(seed, out_shape_probe.shape());

    auto loss = [&]() {
        Tape t;
        std::vector<Var> vs;
        for (const auto& in : inputs) vs.push_back(t.leaf(in));
        return t.value(sum(t, mul(t, build(t, vs), t.leaf(weights))))[0];
    };
    Tape tape;
    std::vector<Var> vs;
    for (const auto& in : inputs) vs.push_back(tape.leaf(in, true));
    tape.backward(sum(tape, mul(tape, build(tape, vs), tape.leaf(weights))));
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        const Tensor g = tape.grad(vs[k]);
        const FdReport r = finite_difference_check(loss, inputs[k].data(), g.data(), opts);
        CAPTURE(k);
        CHECK(r.all_pass());
    }
}

}  // namespace

TEST_CASE("conv3d with a centred unit kernel is the identity") {
    Tape tape;
    const Tensor x = random_tensor(1, Shape{1, Dims{4, 3, 5}});
    Tensor w(kernel_shape(1, 1, 3));
    w[13] = 1.0;
    const Var y = conv3d(tape, tape.leaf(x), tape.leaf(w), tape.leaf(bias_tensor(1)), 1);
    CHECK(tape.value(y) == x);
}

TEST_CASE("all-ones kernel on an all-ones volume counts in-bounds taps") {
    Tape tape;
    const Var y = conv3d(tape, tape.leaf(Tensor(Shape{1, Dims{4, 4, 4}}, 1.0)),
                         tape.leaf(Tensor(kernel_shape(1, 1, 3), 1.0)), tape.leaf(bias_tensor(1)), 1);
    const Tensor out = tape.value(y);
    const Dims d{4, 4, 4};
    CHECK(out[d.index(1, 1, 1)] == 27.0);
    CHECK(out[d.index(0, 0, 0)] == 8.0);
    CHECK(out[d.index(0, 1, 1)] == 18.0);
    CHECK(out[d.index(0, 0, 1)] == 12.0);
}

TEST_CASE("conv3d bias and channel mixing") {
    // out channel c = sum over input channels of (c + 1) * (i + 1) * x_i + bias_c, with 1x1x1 kernels.
    const Tensor x = random_tensor(2, Shape{2, Dims{3, 3, 3}});
    Tensor w(kernel_shape(3, 2, 1));
    for (int o = 0; o < 3; ++o)
        for (int i = 0; i < 2; ++i) w[static_cast<std::size_t>(o * 2 + i)] = (o + 1) * (i + 1);
    Tensor b = bias_tensor(3);
    b[0] = 0.5;
    b[1] = -1.0;
    b[2] = 2.0;
    Tape tape;
    const Tensor y = tape.value(conv3d(tape, tape.leaf(x), tape.leaf(w), tape.leaf(b), 1));
    REQUIRE(y.channels() == 3);
    for (int o = 0; o < 3; ++o)
        for (std::size_t v = 0; v < 27; ++v) {
            const double expect = (o + 1) * (1 * x.channel(0)[v] + 2 * x.channel(1)[v]) + b[static_cast<std::size_t>(o)];
            CHECK(y.channel(o)[v] == doctest::Approx(expect).epsilon(1e-14));
        }
}

TEST_CASE("stride two halves the extent, rounding up") {
    CHECK(conv_output_dims(Dims{5, 5, 5}, 2) == Dims{3, 3, 3});
    CHECK(conv_output_dims(Dims{16, 8, 4}, 2) == Dims{8, 4, 2});
    CHECK(conv_output_dims(Dims{7, 1, 2}, 1) == Dims{7, 1, 2});
    Tape tape;
    const Tensor x = random_tensor(3, Shape{1, Dims{5, 5, 5}});
    Tensor w(kernel_shape(1, 1, 3));
    w[13] = 1.0;
    const Tensor y = tape.value(conv3d(tape, tape.leaf(x), tape.leaf(w), tape.leaf(bias_tensor(1)), 2));
    CHECK(y.dims() == Dims{3, 3, 3});
    const Dims d{5, 5, 5}, h{3, 3, 3};
    for (int z = 0; z < 3; ++z)
        for (int yy = 0; yy < 3; ++yy)
            for (int xx = 0; xx < 3; ++xx) CHECK(y[h.index(xx, yy, z)] == x[d.index(2 * xx, 2 * yy, 2 * z)]);
}

TEST_CASE("conv3d rejects bad arguments") {
    Tape tape;
    const Var x = tape.leaf(Tensor(Shape{2, Dims{4, 4, 4}}));
    CHECK_THROWS(conv3d(tape, x, tape.leaf(Tensor(kernel_shape(1, 2, 3))), tape.leaf(bias_tensor(1)), 3));
    CHECK_THROWS(conv3d(tape, x, tape.leaf(Tensor(kernel_shape(1, 3, 3))), tape.leaf(bias_tensor(1)), 1));
    CHECK_THROWS(conv3d(tape, x, tape.leaf(Tensor(Shape{2, Dims{2, 2, 2}})), tape.leaf(bias_tensor(1)), 1));
}

TEST_CASE("nearest upsampling repeats each voxel in a 2x2x2 block") {
    const Tensor x = random_tensor(4, Shape{2, Dims{2, 3, 1}});
    Tape tape;
    const Tensor y = tape.value(upsample_nearest2x(tape, tape.leaf(x)));
    CHECK(y.shape() == Shape{2, Dims{4, 6, 2}});
    const Dims lo{2, 3, 1}, hi{4, 6, 2};
    for (int c = 0; c < 2; ++c)
        for (int z = 0; z < 2; ++z)
            for (int yy = 0; yy < 6; ++yy)
                for (int xx = 0; xx < 4; ++xx) CHECK(y.channel(c)[hi.index(xx, yy, z)] == x.channel(c)[lo.index(xx / 2, yy / 2, 0)]);
}

TEST_CASE("activations") {
    Tape tape;
    const Tensor x(Shape{1, Dims{4, 1, 1}}, std::vector<double>{-2.0, 0.0, 3.0, -0.5});
    const Tensor l = tape.value(leaky_relu(tape, tape.leaf(x)));
    CHECK(l[0] == doctest::Approx(-0.4).epsilon(1e-15));
    CHECK(l[1] == 0.0);
    CHECK(l[2] == 3.0);
    const Tensor s = tape.value(sigmoid(tape, tape.leaf(x)));
    CHECK(s[1] == 0.5);
    CHECK(s[2] == doctest::Approx(1.0 / (1.0 + std::exp(-3.0))).epsilon(1e-15));
    // Clamped inside (0, 1) so a gate never closes completely.
    CHECK(sigmoid_value(-800.0) > 0.0);
    CHECK(sigmoid_value(800.0) < 1.0);
    CHECK(sigmoid_value(800.0) > 1.0 - 1e-15);
    CHECK(sigmoid_value(2.0) + sigmoid_value(-2.0) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("channel concat, slice, elementwise and sum") {
    const Tensor a = random_tensor(5, Shape{2, Dims{2, 2, 2}});
    const Tensor b = random_tensor(6, Shape{1, Dims{2, 2, 2}});
    Tape tape;
    const Var va = tape.leaf(a), vb = tape.leaf(b);
    const Var cat = concat_channels(tape, va, vb);
    CHECK(tape.value(cat).channels() == 3);
    CHECK(tape.value(slice_channels(tape, cat, 2, 1)) == b);
    CHECK(tape.value(slice_channels(tape, cat, 0, 2)) == a);
    CHECK_THROWS(slice_channels(tape, cat, 2, 2));
    CHECK_THROWS_AS(concat_channels(tape, va, tape.leaf(Tensor(Shape{1, Dims{2, 2, 3}}))), DimensionMismatch);
    CHECK_THROWS_AS(add(tape, va, vb), DimensionMismatch);

    const Tensor m = tape.value(mul(tape, vb, vb));
    const Tensor s = tape.value(add(tape, vb, scale(tape, vb, -1.0)));
    double total = 0.0;
    for (std::size_t i = 0; i < b.size(); ++i) {
        CHECK(m[i] == b[i] * b[i]);
        CHECK(s[i] == 0.0);
        total += a[i] + a[i + 8];
    }
    CHECK(tape.value(sum(tape, va))[0] == doctest::Approx(total).epsilon(1e-14));
}

TEST_CASE("backward visits each reachable node once and accumulates fan-out") {
    Tape tape;
    const Var x = tape.leaf(Tensor(Shape{1, Dims{2, 1, 1}}, std::vector<double>{1.5, -2.0}), true);
    const Var y = mul(tape, x, x);  // x used twice
    const Var z = add(tape, y, x);
    const Var unused = scale(tape, x, 3.0);
    const Var out = sum(tape, z);
    tape.backward(out);
    CHECK(tape.visits(out) == 1);
    CHECK(tape.visits(z) == 1);
    CHECK(tape.visits(y) == 1);
    CHECK(tape.visits(unused) == 0);
    const Tensor g = tape.grad(x);
    CHECK(g[0] == 2 * 1.5 + 1);
    CHECK(g[1] == 2 * -2.0 + 1);
    CHECK_THROWS_AS(tape.backward(out), std::logic_error);
}

TEST_CASE("subnormal gradients are flushed before they propagate") {
    Tape tape;
    const Var x = tape.leaf(Tensor(Shape{1, Dims{2, 1, 1}}, std::vector<double>{1.0, 2.0}), true);
    const Var a = scale(tape, x, 1.0);
    const Var b = scale(tape, a, 1e-160);
    const Var c = scale(tape, b, 1e-160);
    tape.backward(sum(tape, c));
    // d/da is 1e-320, below the normal range.
    CHECK(tape.grad(b)[0] == 1e-160);
    CHECK(tape.grad(x)[0] == 0.0);
    CHECK(tape.grad(x)[1] == 0.0);
}

TEST_CASE("backward errors") {
    Tape tape;
    const Var x = tape.leaf(Tensor(Shape{1, Dims{2, 1, 1}}, 1.0), true);
    CHECK_THROWS_AS(tape.backward(x), std::invalid_argument);

    Tape other;
    CHECK_THROWS_AS(other.value(Var{}), std::out_of_range);

    Tape finite;
    Tensor bad(Shape{1, Dims{1, 1, 1}}, 0.0);
    bad[0] = std::nan("");
    CHECK_THROWS_AS(finite.leaf(bad), NonFiniteError);

    Tape constants;
    const Var c = constants.leaf(Tensor::scalar(2.0));
    constants.backward(scale(constants, c, 2.0));
    CHECK(!constants.has_grad(c));
    CHECK(constants.grad(c)[0] == 0.0);
}

TEST_CASE("primitive gradients match finite differences") {
    const Shape s4{2, Dims{4, 3, 4}};
    SUBCASE("conv stride 1") {
        check_op_gradients([](Tape& t, const std::vector<Var>& v) { return conv3d(t, v[0], v[1], v[2], 1); },
                           {random_tensor(10, s4), random_tensor(11, kernel_shape(3, 2, 3)),
                            random_tensor(12, Shape{3, Dims{1, 1, 1}})},
                           13);
    }
    SUBCASE("conv stride 2 on odd extents") {
        check_op_gradients([](Tape& t, const std::vector<Var>& v) { return conv3d(t, v[0], v[1], v[2], 2); },
                           {random_tensor(14, Shape{1, Dims{5, 4, 3}}), random_tensor(15, kernel_shape(2, 1, 3)),
                            random_tensor(16, Shape{2, Dims{1, 1, 1}})},
                           17);
    }
    SUBCASE("upsample") {
        check_op_gradients([](Tape& t, const std::vector<Var>& v) { return upsample_nearest2x(t, v[0]); },
                           {random_tensor(18, Shape{2, Dims{2, 3, 2}})}, 19);
    }
    SUBCASE("activations") {
        // Values kept away from the leaky ReLU kink.
        Tensor x = random_tensor(20, s4, 0.05, 2.0);
        for (std::size_t i = 0; i < x.size(); i += 2) x[i] = -x[i];
        check_op_gradients([](Tape& t, const std::vector<Var>& v) { return leaky_relu(t, v[0]); }, {x}, 21);
        check_op_gradients([](Tape& t, const std::vector<Var>& v) { return sigmoid(t, v[0]); }, {x}, 22);
    }
    SUBCASE("concat, slice, mul, add, scale") {
        check_op_gradients(
            [](Tape& t, const std::vector<Var>& v) {
                const Var cat = concat_channels(t, v[0], v[1]);
                const Var prod = mul(t, slice_channels(t, cat, 1, 2), v[1]);
                return add(t, scale(t, prod, -0.7), v[0]);
            },
            {random_tensor(23, s4), random_tensor(24, s4)}, 25);
    }
}
