// Acceptance checks, one PASS/FAIL line per criterion.
//   acceptance                 run everything
//   acceptance --criterion 6   run one

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gradreg/fd_check.hpp"
#include "gradreg/fusion.hpp"
#include "gradreg/gradmap.hpp"
#include "gradreg/losses.hpp"
#include "gradreg/metrics.hpp"
#include "gradreg/ops.hpp"
#include "gradreg/phantom.hpp"
#include "gradreg/train.hpp"
#include "support/test_support.hpp"

using namespace gradreg;

namespace {

// Tolerances and budgets.
constexpr int kGradmapVolumes = 50;
constexpr double kMindScaleTol = 1e-10;
constexpr double kMindOracleRtol = 1e-12;
constexpr double kFdRtol = 1e-3;
constexpr double kFdStep = 1e-6;
constexpr double kFdPassFraction = 0.99;
constexpr int kFusionPairs = 20;
constexpr double kSaturatedBias = 20.0;
constexpr double kSaturatedTol = 1e-8;
constexpr double kDiceGain = 0.05;
constexpr double kMonoTolerance = 0.01;

// Desk-scale training setup shared by criteria 6 and 7.
constexpr int kTrainPairs = 8;
constexpr int kHeldOut = 4;
constexpr std::uint64_t kHeldOutSeed = 1000;
constexpr int kIterations = 2000;
constexpr double kLearningRate = 5e-3;
constexpr double kDeformAmplitude = 5.0;

struct Outcome {
    bool pass;
    std::string detail;
};

std::string format(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

PhantomCase phantom(std::uint64_t seed) {
    PhantomConfig pc;
    pc.seed = seed;
    pc.deform_amplitude = kDeformAmplitude;
    return generate_phantom_pair(pc);
}

double rel(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300}); }

Outcome gradmap_oracle() {
    for (int k = 0; k < kGradmapVolumes; ++k) {
        const Volume v = testing::random_volume(static_cast<std::uint64_t>(k), Dims{8, 8, 8}, -5, 5);
        if (gradient_map(v).data() != testing::naive_gradient_map(v).data()) {
            return {false, format("volume %d differs from the loop oracle", k)};
        }
    }
    return {true, format("%d volumes bitwise equal", kGradmapVolumes)};
}

Outcome mind_correctness() {
    double worst_scale = 0.0, worst_oracle = 0.0;
    bool self_zero = true;
    for (std::uint64_t k = 0; k < 10; ++k) {
        const Volume v = testing::random_volume(2 * k, Dims{6, 6, 6});
        const Volume w = testing::random_volume(2 * k + 1, Dims{6, 6, 6});
        std::vector<double> tripled(v.data());
        for (double& x : tripled) x *= 3.0;
        self_zero = self_zero && mind_loss(v, v) == 0.0;
        worst_scale = std::max(worst_scale, mind_loss(Volume(v.dims(), {}, tripled), v));
        const double oracle = testing::naive_mind_loss(v, w, testing::six_neighbourhood(), 1, 1e-6);
        worst_oracle = std::max(worst_oracle, rel(mind_loss(v, w), oracle));
    }
    const bool pass = self_zero && worst_scale <= kMindScaleTol && worst_oracle <= kMindOracleRtol;
    return {pass, format("self=%s scale=%.3g (tol %.0e) oracle rel=%.3g (tol %.0e)", self_zero ? "0" : "nonzero",
                         worst_scale, kMindScaleTol, worst_oracle, kMindOracleRtol)};
}

Outcome warp_and_gradients() {
    const Volume v = testing::random_volume(3, Dims{7, 5, 6});
    const bool identity = warp_trilinear(v, identity_field(v.dims())) == v;

    // Two free fields, gated fusion, both warps, both similarity terms and
    // both regularizers, on 4^3.
    const Dims d{4, 4, 4};
    const Volume ct = testing::random_volume(10, d), mr = testing::random_volume(11, d);
    const PreparedPair pair = prepare_pair(ct, mr, MindParams{});
    Tensor phi_i = testing::random_field(12, d, 1.0).to_tensor();
    Tensor phi_g = testing::random_field(13, d, 1.0).to_tensor();
    GatedFusionParams fusion = init_gated_fusion(14);
    testing::CounterRng rng(15, 0);
    for (std::size_t i = 0; i < fusion.gate_w.size(); ++i) fusion.gate_w[i] = rng.uniform(-0.2, 0.2);
    const LossWeights weights = LossWeights::pig_kidney();

    auto record = [&](Tape& t, bool grad, std::vector<Var>& leaves) {
        leaves.clear();
        leaves.push_back(t.leaf(phi_i, grad));
        leaves.push_back(t.leaf(phi_g, grad));
        for (const auto& n : fusion.named()) leaves.push_back(t.leaf(n.value, grad));
        const std::vector<Var> gate(leaves.begin() + 2, leaves.end());
        const Var fused = gated_fuse(t, gate, leaves[0], leaves[1]);
        const Var wct = warp(t, t.leaf(Tensor::from_volume(pair.ct)), fused);
        const Var wgct = warp(t, t.leaf(Tensor::from_volume(pair.gct)), leaves[1]);
        return combine_losses(t, mind_loss(t, wct, pair.mr_features), mind_loss(t, wgct, pair.gmr_features),
                              smoothness_loss(t, fused), smoothness_loss(t, leaves[1]), weights)
            .total;
    };
    auto f = [&]() {
        Tape t;
        std::vector<Var> leaves;
        return t.value(record(t, false, leaves))[0];
    };
    Tape tape;
    std::vector<Var> leaves;
    tape.backward(record(tape, true, leaves));

    Tensor* params[] = {&phi_i, &phi_g, &fusion.gate_w, &fusion.gate_b, &fusion.bottleneck_w, &fusion.bottleneck_b};
    std::size_t probed = 0, passed = 0;
    for (std::size_t k = 0; k < 6; ++k) {
        const Tensor g = tape.grad(leaves[k]);
        const FdReport r = finite_difference_check(f, params[k]->data(), g.data(), FdOptions{kFdStep, kFdRtol, 1e-8});
        probed += r.entries.size();
        passed += r.passed();
    }
    const double frac = static_cast<double>(passed) / static_cast<double>(probed);
    return {identity && frac >= kFdPassFraction,
            format("identity %s; fd %zu/%zu = %.4f (need %.2f at rtol %.0e)", identity ? "bitwise" : "DIFFERS",
                   passed, probed, frac, kFdPassFraction, kFdRtol)};
}

Outcome fusion_equivalence() {
    const GatedFusionParams zero = init_gated_fusion(0, true);
    for (int k = 0; k < kFusionPairs; ++k) {
        const Dims d{6, 5, 4};
        const auto a = testing::random_field(100 + k, d, 3.0), b = testing::random_field(200 + k, d, 3.0);
        if (gated_fuse(zero, a, b).disp() != average_fuse(a, b).disp()) {
            return {false, format("pair %d: zero-gate fusion differs from the average", k)};
        }
    }
    GatedFusionParams saturated = zero;
    saturated.gate_b.fill(kSaturatedBias);
    double worst = 0.0;
    for (int k = 0; k < kFusionPairs; ++k) {
        const Dims d{6, 5, 4};
        const auto a = testing::random_field(300 + k, d, 2.0), b = testing::random_field(400 + k, d, 2.0);
        const auto g = gated_fuse(saturated, a, b);
        for (std::size_t i = 0; i < g.disp().size(); ++i) {
            worst = std::max(worst, std::abs(g.disp()[i] - (a.disp()[i] + b.disp()[i])));
        }
    }
    return {worst <= kSaturatedTol,
            format("%d pairs bitwise; saturated max err %.3g (tol %.0e)", kFusionPairs, worst, kSaturatedTol)};
}

Outcome network_init() {
    TrainConfig c;  // full-width defaults, gated
    const TrainedModel m = init_model(c);
    const PhantomCase p = phantom(7);
    const PreparedPair pair = prepare_pair(p.moving, p.fixed, c.mind);
    const DualBranchOutput out = dual_branch_forward(m, pair.ct, pair.mr, pair.gct, pair.gmr);
    bool zero = true;
    for (double v : out.phi_ig.disp()) zero = zero && v == 0.0;
    const bool same = out.warped_ct == pair.ct;
    return {zero && same, format("phi_ig %s, warped %s on 32^3", zero ? "zero" : "NONZERO",
                                 same ? "== moving" : "DIFFERS")};
}

std::vector<VolumePair> training_pairs() {
    std::vector<VolumePair> pairs;
    for (int k = 0; k < kTrainPairs; ++k) {
        const PhantomCase c = phantom(static_cast<std::uint64_t>(k));
        pairs.push_back({c.moving, c.fixed});
    }
    return pairs;
}

struct HeldOut {
    double dice_before = 0.0;
    double dice_after = 0.0;
    double rmse_zero = 0.0;
    double rmse_pred = 0.0;
};

HeldOut evaluate_held_out(const TrainedModel& model) {
    HeldOut h;
    for (int k = 0; k < kHeldOut; ++k) {
        const PhantomCase c = phantom(kHeldOutSeed + static_cast<std::uint64_t>(k));
        const Registration r = register_pair(model, c.moving, c.fixed);
        const EvalReport e = evaluate_case("held", c.moving_mask, c.fixed_mask, r.field, &c.gt_field);
        double before = 0.0, after = 0.0;
        for (const auto& l : e.labels) {
            before += l.dice_before;
            after += l.dice_after;
        }
        h.dice_before += before / static_cast<double>(e.labels.size());
        h.dice_after += after / static_cast<double>(e.labels.size());
        h.rmse_zero += field_rmse(identity_field(c.gt_field.dims()), c.gt_field, &c.fixed_mask);
        h.rmse_pred += *e.field_rmse;
    }
    for (double* v : {&h.dice_before, &h.dice_after, &h.rmse_zero, &h.rmse_pred}) *v /= kHeldOut;
    return h;
}

TrainConfig desk_config(FusionMode mode, std::uint64_t seed) {
    TrainConfig c;
    c.unet = UNetConfig::thin();
    c.fusion_mode = mode;
    c.iterations = kIterations;
    c.learning_rate = kLearningRate;
    c.seed = seed;
    return c;
}

Outcome registration_improves() {
    const TrainedModel m = train_dual_branch(training_pairs(), desk_config(FusionMode::kGated, 0));
    const HeldOut h = evaluate_held_out(m);
    const double gain = h.dice_after - h.dice_before;
    return {gain >= kDiceGain && h.rmse_pred < h.rmse_zero,
            format("dice %.4f -> %.4f (gain %.4f, need %.2f); rmse %.4f -> %.4f", h.dice_before, h.dice_after, gain,
                   kDiceGain, h.rmse_zero, h.rmse_pred)};
}

Outcome dual_vs_mono() {
    const auto pairs = training_pairs();
    double dual = 0.0, mono = 0.0;
    std::string per_seed;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const double d = evaluate_held_out(train_dual_branch(pairs, desk_config(FusionMode::kGated, seed))).dice_after;
        const double m = evaluate_held_out(train_dual_branch(pairs, desk_config(FusionMode::kMono, seed))).dice_after;
        per_seed += format(" [seed %d: %.4f vs %.4f]", static_cast<int>(seed), d, m);
        dual += d / 3;
        mono += m / 3;
    }
    return {dual >= mono - kMonoTolerance,
            format("dual %.4f vs mono %.4f (tolerance %.2f)%s", dual, mono, kMonoTolerance, per_seed.c_str())};
}

LabelMask mask_from_bits(Dims d, std::uint64_t bits) {
    std::vector<std::int32_t> l(d.size());
    for (std::size_t i = 0; i < l.size(); ++i) l[i] = static_cast<std::int32_t>((bits >> i) & 1u);
    return LabelMask(d, l);
}

LabelMask box_mask(Dims d, const int lo[3], const int hi[3]) {
    std::vector<std::int32_t> l(d.size(), 0);
    for (int z = lo[2]; z <= hi[2]; ++z)
        for (int y = lo[1]; y <= hi[1]; ++y)
            for (int x = lo[0]; x <= hi[0]; ++x) l[d.index(x, y, z)] = 1;
    return LabelMask(d, l);
}

Outcome metrics_oracles() {
    std::size_t compared = 0;
    auto agree = [&](const LabelMask& a, const LabelMask& b, std::int32_t label, const Spacing& s) {
        ++compared;
        if (dice(a, b, label) != testing::naive_dice(a, b, label)) return false;
        if (testing::naive_surface(a, label).empty() || testing::naive_surface(b, label).empty()) return true;
        return asd(a, b, label, s) == testing::brute_asd(a, b, label, s);
    };
    const Spacing sp{1.0, 1.5, 0.75};
    // Every pair of masks on 2x2x1 and 3x1x1, every mask on 2x2x2 against three references.
    for (const Dims d : {Dims{2, 2, 1}, Dims{3, 1, 1}}) {
        const std::uint64_t n = std::uint64_t{1} << d.size();
        for (std::uint64_t a = 0; a < n; ++a)
            for (std::uint64_t b = 0; b < n; ++b)
                if (!agree(mask_from_bits(d, a), mask_from_bits(d, b), 1, sp)) return {false, "exhaustive pair mismatch"};
    }
    for (std::uint64_t a = 0; a < 256; ++a)
        for (std::uint64_t b : {0x0fULL, 0x81ULL, 0xffULL})
            if (!agree(mask_from_bits(Dims{2, 2, 2}, a), mask_from_bits(Dims{2, 2, 2}, b), 1, sp)) {
                return {false, "2x2x2 mismatch"};
            }
    // Every axis-aligned box on 4^3 against a fixed box.
    const Dims d4{4, 4, 4};
    const int rlo[3] = {1, 0, 1}, rhi[3] = {2, 3, 3};
    const LabelMask ref = box_mask(d4, rlo, rhi);
    for (int x0 = 0; x0 < 4; ++x0)
        for (int x1 = x0; x1 < 4; ++x1)
            for (int y0 = 0; y0 < 4; ++y0)
                for (int y1 = y0; y1 < 4; ++y1)
                    for (int z0 = 0; z0 < 4; ++z0)
                        for (int z1 = z0; z1 < 4; ++z1) {
                            const int lo[3] = {x0, y0, z0}, hi[3] = {x1, y1, z1};
                            if (!agree(box_mask(d4, lo, hi), ref, 1, sp)) return {false, "4^3 box mismatch"};
                        }
    // Random multi-label masks up to 8^3.
    std::uint64_t seed = 0;
    for (const Dims d : {Dims{4, 4, 4}, Dims{6, 5, 7}, Dims{8, 8, 8}}) {
        for (int rep = 0; rep < 5; ++rep) {
            testing::CounterRng rng(seed++, 3);
            std::vector<std::int32_t> la(d.size()), lb(d.size());
            for (auto& v : la) v = rng.uniform() < 0.5 ? 1 + static_cast<std::int32_t>(rng.below(3)) : 0;
            for (auto& v : lb) v = rng.uniform() < 0.5 ? 1 + static_cast<std::int32_t>(rng.below(3)) : 0;
            for (std::int32_t label = 1; label <= 3; ++label) {
                if (!agree(LabelMask(d, la), LabelMask(d, lb), label, sp)) return {false, "random mask mismatch"};
            }
        }
    }
    // EDT against brute force.
    for (const Dims d : {Dims{5, 4, 3}, Dims{8, 8, 8}}) {
        testing::CounterRng rng(seed++, 4);
        std::vector<std::uint8_t> seeds(d.size());
        for (auto& s : seeds) s = rng.uniform() < 0.05;
        seeds[0] = 1;
        const auto edt = squared_edt(d, seeds, sp);
        for (int z = 0; z < d.nz; ++z)
            for (int y = 0; y < d.ny; ++y)
                for (int x = 0; x < d.nx; ++x) {
                    double best = INFINITY;
                    for (int c = 0; c < d.nz; ++c)
                        for (int b = 0; b < d.ny; ++b)
                            for (int a = 0; a < d.nx; ++a)
                                if (seeds[d.index(a, b, c)]) best = std::min(best, testing::squared_mm({x, y, z}, {a, b, c}, sp));
                    if (edt[d.index(x, y, z)] != best) return {false, "EDT mismatch"};
                }
    }
    return {true, format("%zu mask comparisons and 2 EDT grids exact", compared)};
}

Outcome determinism() {
    testing::TempDir dir("acceptance");
    std::vector<VolumePair> pairs;
    for (std::uint64_t s = 0; s < 2; ++s) {
        PhantomConfig pc;
        pc.dims = Dims{16, 16, 16};
        pc.seed = s;
        const PhantomCase c = generate_phantom_pair(pc);
        pairs.push_back({c.moving, c.fixed});
    }
    TrainConfig c = desk_config(FusionMode::kGated, 5);
    c.iterations = 10;
    const std::string a = checkpoint_bytes(train_dual_branch(pairs, c));
    const std::string b = checkpoint_bytes(train_dual_branch(pairs, c));
    const bool same_ckpt = a == b;

    const Volume v = testing::random_volume(1, Dims{5, 6, 7}, -3, 3);
    save_volume(v, dir / "v.vol");
    const bool vol = load_volume(dir / "v.vol") == v;
    const DeformationField f = testing::random_field(2, Dims{5, 6, 7}, 4.0);
    save_field(f, dir / "f.vol");
    const bool field = load_field(dir / "f.vol") == f;
    write_file_atomic(dir / "m.ckpt", a);
    const bool ckpt = checkpoint_bytes(load_checkpoint(dir / "m.ckpt")) == a;
    const bool pass = same_ckpt && vol && field && ckpt;
    return {pass, format("checkpoints %s; volume %s; field %s; checkpoint %s", same_ckpt ? "identical" : "DIFFER",
                         vol ? "ok" : "FAIL", field ? "ok" : "FAIL", ckpt ? "ok" : "FAIL")};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance criteria"};
    int only = 0;
    app.add_option("--criterion", only, "run a single criterion (1-9)")->check(CLI::Range(1, 9));
    CLI11_PARSE(app, argc, argv);

    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
        {"gradient map oracle", gradmap_oracle},
        {"MIND correctness", mind_correctness},
        {"warp identity and end-to-end gradients", warp_and_gradients},
        {"fusion equivalence", fusion_equivalence},
        {"network init contract", network_init},
        {"registration improves held-out alignment", registration_improves},
        {"dual-branch >= mono-branch", dual_vs_mono},
        {"metrics oracles", metrics_oracles},
        {"determinism and round-trips", determinism},
    };
    bool all = true;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        if (only != 0 && static_cast<int>(i) + 1 != only) continue;
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::printf("%s criterion %zu (%s): %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first,
                    o.detail.c_str(), secs);
        std::fflush(stdout);
        all = all && o.pass;
    }
    return all ? 0 : 1;
}
