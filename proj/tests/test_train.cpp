#include "doctest.h"

#include <cmath>

#include "gradreg/adam.hpp"
#include "gradreg/phantom.hpp"
#include "gradreg/train.hpp"
#include "support/test_support.hpp"

using namespace gradreg;

namespace {

std::vector<VolumePair> phantom_pairs(int count, std::uint64_t base_seed) {
    std::vector<VolumePair> pairs;
    for (int k = 0; k < count; ++k) {
        PhantomConfig pc;
        pc.dims = Dims{16, 16, 16};
        pc.deform_amplitude = 2.0;
        pc.deform_smoothness = 4.0;
        pc.seed = base_seed + static_cast<std::uint64_t>(k);
        const PhantomCase c = generate_phantom_pair(pc);
        pairs.push_back({c.moving, c.fixed});
    }
    return pairs;
}

TrainConfig small_config(FusionMode mode, int iterations) {
    TrainConfig c;
    c.unet = UNetConfig::thin();
    c.fusion_mode = mode;
    c.iterations = iterations;
    c.learning_rate = 1e-3;
    c.seed = 4;
    return c;
}

Volume gaussian_blob(Dims d, double cx, double cy, double cz, double sigma) {
    std::vector<double> data(d.size());
    for (int z = 0; z < d.nz; ++z)
        for (int y = 0; y < d.ny; ++y)
            for (int x = 0; x < d.nx; ++x) {
                const double r2 = (x - cx) * (x - cx) + (y - cy) * (y - cy) + (z - cz) * (z - cz);
                data[d.index(x, y, z)] = std::exp(-r2 / (2 * sigma * sigma));
            }
    return Volume(d, {}, std::move(data));
}

}  // namespace

TEST_CASE("adam first step moves by the learning rate against the gradient sign") {
    Tensor p(Shape{1, Dims{3, 1, 1}}, std::vector<double>{1.0, -2.0, 0.5});
    const Tensor g(Shape{1, Dims{3, 1, 1}}, std::vector<double>{0.3, -4.0, 0.0});
    AdamState s;
    Tensor* params[] = {&p};
    const Tensor* grads[] = {&g};
    adam_step(s, params, grads, 0.01);
    CHECK(p[0] == doctest::Approx(1.0 - 0.01 * 0.3 / (0.3 + 1e-8)).epsilon(1e-15));
    CHECK(p[1] == doctest::Approx(-2.0 + 0.01 * 4.0 / (4.0 + 1e-8)).epsilon(1e-15));
    CHECK(p[2] == 0.5);

    // Second step, by hand.
    const Tensor g2(Shape{1, Dims{3, 1, 1}}, std::vector<double>{-0.1, -4.0, 0.0});
    const double before = p[0];
    const Tensor* grads2[] = {&g2};
    adam_step(s, params, grads2, 0.01);
    const double m = 0.9 * (0.1 * 0.3) + 0.1 * -0.1;
    const double v = 0.999 * (0.001 * 0.09) + 0.001 * 0.01;
    const double mhat = m / (1 - 0.81), vhat = v / (1 - 0.999 * 0.999);
    CHECK(p[0] == doctest::Approx(before - 0.01 * mhat / (std::sqrt(vhat) + 1e-8)).epsilon(1e-13));
    CHECK(s.step == 2);
}

TEST_CASE("config text round-trips and rejects bad input") {
    TrainConfig c;
    c.learning_rate = 3.25e-4;
    c.iterations = 17;
    c.weights = LossWeights::abdomen();
    c.fusion_mode = FusionMode::kAverage;
    c.seed = 99;
    c.checkpoint_interval = 5;
    c.smoothness = SmoothnessMode::kL2;
    c.mind.offsets = {{1, 0, 0}, {0, -2, 1}};
    c.mind.patch_radius = 2;
    c.mind.variance_floor = 1e-4;
    c.unet = UNetConfig::thin();
    c.zero_gate_init = true;
    const std::string text = to_config_text(c);
    const TrainConfig back = parse_train_config(text);
    CHECK(to_config_text(back) == text);
    CHECK(back.learning_rate == c.learning_rate);
    CHECK(back.unet.enc_channels == std::vector<int>{2, 2, 2, 2});
    CHECK(back.mind.offsets == c.mind.offsets);

    const TrainConfig commented = parse_train_config("# comment\n\niterations = 3\nweights_preset=pig_kidney\n");
    CHECK(commented.iterations == 3);
    CHECK(commented.weights.gamma == 0.8);
    CHECK_THROWS_AS(parse_train_config("learning_rte=1\n"), std::invalid_argument);
    CHECK_THROWS(parse_train_config("batch_size=2\n"));
    CHECK_THROWS(parse_train_config("learning_rate=0\n"));
    CHECK_THROWS(parse_train_config("fusion_mode=max\n"));
    CHECK_THROWS(parse_train_config("iterations=ten\n"));
    CHECK_THROWS(parse_train_config("just words\n"));
    CHECK(parse_fusion_mode(to_string(FusionMode::kMono)) == FusionMode::kMono);
}

TEST_CASE("zero iterations returns the initialization") {
    const auto pairs = phantom_pairs(1, 0);
    const TrainConfig c = small_config(FusionMode::kGated, 0);
    const TrainedModel m = train_dual_branch(pairs, c);
    CHECK(m == init_model(c));
    CHECK(m.history.empty());
    CHECK(m.fusion.has_value());
    CHECK(!init_model(small_config(FusionMode::kAverage, 0)).fusion.has_value());
}

TEST_CASE("fresh model predicts the identity") {
    const auto pairs = phantom_pairs(1, 1);
    const TrainedModel m = init_model(small_config(FusionMode::kAverage, 1));
    const PreparedPair p = prepare_pair(pairs[0].moving, pairs[0].fixed, m.config.mind);
    const DualBranchOutput out = dual_branch_forward(m, p.ct, p.mr, p.gct, p.gmr);
    for (double v : out.phi_ig.disp()) CHECK(v == 0.0);
    CHECK(out.warped_ct == p.ct);
    CHECK(out.warped_gct == p.gct);
}

TEST_CASE("zero-gate gated and average modes share the first loss") {
    const auto pairs = phantom_pairs(2, 2);
    TrainConfig gated = small_config(FusionMode::kGated, 1);
    gated.zero_gate_init = true;
    const TrainConfig avg = small_config(FusionMode::kAverage, 1);
    const TrainedModel a = train_dual_branch(pairs, gated);
    const TrainedModel b = train_dual_branch(pairs, avg);
    REQUIRE(a.history.size() == 1);
    CHECK(a.history[0].total == b.history[0].total);
    CHECK(a.history[0].isim == b.history[0].isim);
}

TEST_CASE("training lowers the objective") {
    const auto pairs = phantom_pairs(1, 3);
    for (FusionMode mode : {FusionMode::kGated, FusionMode::kMono}) {
        const TrainedModel m = train_dual_branch(pairs, small_config(mode, 200));
        REQUIRE(m.history.size() == 200);
        double first = 0.0, last = 0.0;
        for (int i = 0; i < 20; ++i) {
            first += m.history[static_cast<std::size_t>(i)].total;
            last += m.history[m.history.size() - 1 - static_cast<std::size_t>(i)].total;
        }
        CAPTURE(to_string(mode));
        CHECK(last < first);
        CHECK(m.history.back().total < m.history.front().total);
        if (mode == FusionMode::kMono) {
            for (const auto& r : m.history) {
                CHECK(r.gsim == 0.0);
                CHECK(r.greg == 0.0);
            }
        }
    }
}

TEST_CASE("training is deterministic and checkpoints round-trip") {
    testing::TempDir dir("ckpt");
    const auto pairs = phantom_pairs(2, 4);
    TrainConfig c = small_config(FusionMode::kGated, 6);
    c.checkpoint_interval = 3;
    std::vector<int> seen;
    const TrainedModel a = train_dual_branch(pairs, c, [&](const TrainedModel& m, int iter) {
        seen.push_back(iter);
        CHECK(m.history.size() == static_cast<std::size_t>(iter));
    });
    CHECK(seen == std::vector<int>{3, 6});
    const TrainedModel b = train_dual_branch(pairs, c);
    CHECK(checkpoint_bytes(a) == checkpoint_bytes(b));
    c.seed = 5;
    CHECK(checkpoint_bytes(train_dual_branch(pairs, c)) != checkpoint_bytes(a));

    save_checkpoint(a, dir / "m.ckpt");
    const TrainedModel loaded = load_checkpoint(dir / "m.ckpt");
    CHECK(loaded == a);
    CHECK(checkpoint_bytes(loaded) == checkpoint_bytes(a));
    const Registration ra = register_pair(a, pairs[1].moving, pairs[1].fixed);
    const Registration rb = register_pair(loaded, pairs[1].moving, pairs[1].fixed);
    CHECK(ra.field == rb.field);
    CHECK(ra.warped == rb.warped);
    CHECK(ra.report.total == rb.report.total);

    const std::string bytes = checkpoint_bytes(a);
    CHECK_THROWS_AS(parse_checkpoint(bytes.substr(0, bytes.size() / 2)), VolumeIoError);
    CHECK_THROWS_AS(parse_checkpoint("not a checkpoint"), VolumeIoError);
    CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), VolumeIoError);
}

TEST_CASE("average-mode checkpoints carry no fusion tensors") {
    const TrainedModel m = init_model(small_config(FusionMode::kAverage, 0));
    const std::string bytes = checkpoint_bytes(m);
    CHECK(bytes.find("fusion/") == std::string::npos);
    CHECK(parse_checkpoint(bytes) == m);
}

TEST_CASE("instance optimization leaves an aligned pair untouched") {
    const Volume v = gaussian_blob(Dims{8, 8, 8}, 3.5, 4.0, 3.8, 1.8);
    TrainConfig c = small_config(FusionMode::kGated, 10);
    c.learning_rate = 0.05;
    const InstanceResult r = instance_optimize(v, v, c);
    for (double x : r.phi_i.disp()) CHECK(x == 0.0);
    for (double x : r.phi_ig.disp()) CHECK(x == 0.0);
    for (const auto& h : r.history) CHECK(h.total == 0.0);
}

TEST_CASE("instance optimization recovers a one-voxel translation") {
    // fixed(x) = moving(x + 1), so the ideal displacement is +1 along x.
    const Dims d{12, 12, 12};
    const Volume moving = gaussian_blob(d, 6.0, 5.5, 5.8, 2.0);
    const Volume fixed = gaussian_blob(d, 5.0, 5.5, 5.8, 2.0);
    TrainConfig c = small_config(FusionMode::kAverage, 150);
    c.learning_rate = 0.05;
    const InstanceResult r = instance_optimize(moving, fixed, c);
    REQUIRE(r.history.size() == 150);
    CHECK(r.history.back().isim < 0.5 * r.history.front().isim);
    double ux = 0.0;
    int n = 0;
    for (int z = 3; z < 9; ++z)
        for (int y = 3; y < 9; ++y)
            for (int x = 2; x < 8; ++x) {
                ux += r.phi_ig.at(0, d.index(x, y, z));
                ++n;
            }
    CHECK(std::abs(ux / n - 1.0) <= 0.3);
}

TEST_CASE("loss history csv") {
    const std::vector<LossReport> h{{1, 2, 3, 4, 5}, {0.5, 0.25, 0, 0, 1}};
    const std::string csv = loss_history_csv(h);
    CHECK(csv.rfind("iter,isim,gsim,igreg,greg,total\n", 0) == 0);
    CHECK(csv.find("\n1,1,2,3,4,5\n") != std::string::npos);
    CHECK(csv.find("\n2,0.5,0.25,0,0,1\n") != std::string::npos);
    CHECK(loss_history_csv(h, 0).find("\n0,1,2") != std::string::npos);
}
