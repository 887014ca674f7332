#include "gradreg/train.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "gradreg/adam.hpp"
#include "gradreg/gradmap.hpp"
#include "gradreg/ops.hpp"
#include "gradreg/rng.hpp"

namespace gradreg {

std::string to_string(FusionMode mode) {
    switch (mode) {
        case FusionMode::kAverage:
            return "average";
        case FusionMode::kGated:
            return "gated";
        case FusionMode::kMono:
            return "mono";
    }
    return "gated";
}

FusionMode parse_fusion_mode(const std::string& s) {
    if (s == "average") return FusionMode::kAverage;
    if (s == "gated") return FusionMode::kGated;
    if (s == "mono") return FusionMode::kMono;
    throw std::invalid_argument("unknown fusion_mode: " + s);
}

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be > 0");
    if (batch_size != 1) throw std::invalid_argument("batch_size must be 1");
    if (iterations < 0) throw std::invalid_argument("iterations must be >= 0");
    if (checkpoint_interval < 0) throw std::invalid_argument("checkpoint_interval must be >= 0");
    weights.validate();
    mind.validate();
    unet.validate();
    if (unet.input_channels != 2) throw std::invalid_argument("branch networks take 2 input channels");
}

// ---------------------------------------------------------------------------
// Config text

namespace {

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string join(const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

std::vector<int> parse_int_list(const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(std::stoi(item));
    return out;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

std::string to_config_text(const TrainConfig& c) {
    std::ostringstream out;
    out << "learning_rate=" << fmt(c.learning_rate) << "\n";
    out << "batch_size=" << c.batch_size << "\n";
    out << "iterations=" << c.iterations << "\n";
    out << "alpha=" << fmt(c.weights.alpha) << "\n";
    out << "beta=" << fmt(c.weights.beta) << "\n";
    out << "gamma=" << fmt(c.weights.gamma) << "\n";
    out << "fusion_mode=" << to_string(c.fusion_mode) << "\n";
    out << "seed=" << c.seed << "\n";
    out << "checkpoint_interval=" << c.checkpoint_interval << "\n";
    out << "smoothness=" << (c.smoothness == SmoothnessMode::kL2 ? "l2" : "l2sq") << "\n";
    out << "zero_gate_init=" << (c.zero_gate_init ? 1 : 0) << "\n";
    std::string offsets;
    for (std::size_t i = 0; i < c.mind.offsets.size(); ++i) {
        const auto& r = c.mind.offsets[i];
        offsets += (i ? ";" : "") + std::to_string(r[0]) + "," + std::to_string(r[1]) + "," + std::to_string(r[2]);
    }
    out << "mind_offsets=" << offsets << "\n";
    out << "mind_patch_radius=" << c.mind.patch_radius << "\n";
    out << "mind_variance_floor=" << fmt(c.mind.variance_floor) << "\n";
    out << "unet_enc=" << join(c.unet.enc_channels) << "\n";
    out << "unet_dec=" << join(c.unet.dec_channels) << "\n";
    out << "unet_refine=" << join(c.unet.refine_channels) << "\n";
    return out.str();
}

void apply_config_value(TrainConfig& c, const std::string& key, const std::string& value) {
    try {
        if (key == "learning_rate") {
            c.learning_rate = std::stod(value);
        } else if (key == "batch_size") {
            c.batch_size = std::stoi(value);
        } else if (key == "iterations") {
            c.iterations = std::stoi(value);
        } else if (key == "alpha") {
            c.weights.alpha = std::stod(value);
        } else if (key == "beta") {
            c.weights.beta = std::stod(value);
        } else if (key == "gamma") {
            c.weights.gamma = std::stod(value);
        } else if (key == "weights_preset") {
            if (value == "pig_kidney") {
                c.weights = LossWeights::pig_kidney();
            } else if (value == "abdomen") {
                c.weights = LossWeights::abdomen();
            } else {
                throw std::invalid_argument("unknown weights_preset: " + value);
            }
        } else if (key == "fusion_mode") {
            c.fusion_mode = parse_fusion_mode(value);
        } else if (key == "seed") {
            c.seed = std::stoull(value);
        } else if (key == "checkpoint_interval") {
            c.checkpoint_interval = std::stoi(value);
        } else if (key == "smoothness") {
            if (value == "l2") {
                c.smoothness = SmoothnessMode::kL2;
            } else if (value == "l2sq") {
                c.smoothness = SmoothnessMode::kL2Sq;
            } else {
                throw std::invalid_argument("smoothness must be l2 or l2sq");
            }
        } else if (key == "zero_gate_init") {
            c.zero_gate_init = std::stoi(value) != 0;
        } else if (key == "mind_offsets") {
            c.mind.offsets.clear();
            std::stringstream ss(value);
            std::string item;
            while (std::getline(ss, item, ';')) {
                const auto v = parse_int_list(item);
                if (v.size() != 3) throw std::invalid_argument("mind offset needs 3 components: " + item);
                c.mind.offsets.push_back({v[0], v[1], v[2]});
            }
        } else if (key == "mind_patch_radius") {
            c.mind.patch_radius = std::stoi(value);
        } else if (key == "mind_variance_floor") {
            c.mind.variance_floor = std::stod(value);
        } else if (key == "unet_enc") {
            c.unet.enc_channels = parse_int_list(value);
        } else if (key == "unet_dec") {
            c.unet.dec_channels = parse_int_list(value);
        } else if (key == "unet_refine") {
            c.unet.refine_channels = parse_int_list(value);
        } else if (key == "unet_preset") {
            if (value == "thin") {
                c.unet = UNetConfig::thin();
            } else if (value == "default") {
                c.unet = UNetConfig{};
            } else {
                throw std::invalid_argument("unknown unet_preset: " + value);
            }
        } else {
            throw std::invalid_argument("unknown config key: " + key);
        }
    } catch (const std::invalid_argument& e) {
        if (std::string(e.what()).find(key) != std::string::npos) throw;
        throw std::invalid_argument("bad value for " + key + ": " + value);
    } catch (const std::out_of_range&) {
        throw std::invalid_argument("value out of range for " + key + ": " + value);
    }
}

TrainConfig parse_train_config(const std::string& text, TrainConfig base) {
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw std::invalid_argument("config line without '=': " + line);
        apply_config_value(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    base.validate();
    return base;
}

// ---------------------------------------------------------------------------
// Model

namespace {

UNetConfig branch_config(const TrainConfig& c, std::uint64_t branch) {
    UNetConfig u = c.unet;
    u.seed = c.seed * 4 + branch;
    return u;
}

}  // namespace

TrainedModel init_model(const TrainConfig& config) {
    config.validate();
    TrainedModel m;
    m.config = config;
    m.net_i = build_unet(branch_config(config, 1));
    m.net_g = build_unet(branch_config(config, 2));
    if (config.fusion_mode == FusionMode::kGated) {
        m.fusion = init_gated_fusion(config.seed * 4 + 3, config.zero_gate_init);
    }
    return m;
}

std::vector<Tensor*> TrainedModel::trainable() {
    std::vector<Tensor*> out;
    for (auto& p : net_i.params) out.push_back(&p.value);
    if (config.fusion_mode != FusionMode::kMono) {
        for (auto& p : net_g.params) out.push_back(&p.value);
    }
    if (fusion) {
        for (Tensor* t : {&fusion->gate_w, &fusion->gate_b, &fusion->bottleneck_w, &fusion->bottleneck_b}) {
            out.push_back(t);
        }
    }
    return out;
}

bool TrainedModel::operator==(const TrainedModel& o) const {
    if (!(net_i == o.net_i) || !(net_g == o.net_g) || fusion != o.fusion) return false;
    if (to_config_text(config) != to_config_text(o.config) || history.size() != o.history.size()) return false;
    for (std::size_t i = 0; i < history.size(); ++i) {
        const auto& a = history[i];
        const auto& b = o.history[i];
        if (a.isim != b.isim || a.gsim != b.gsim || a.igreg != b.igreg || a.greg != b.greg || a.total != b.total) {
            return false;
        }
    }
    return true;
}

PreparedPair prepare_pair(const Volume& ct, const Volume& mr, const MindParams& mind) {
    if (ct.dims() != mr.dims()) {
        throw DimensionMismatch("pair dims differ: " + to_string(ct.dims()) + " vs " + to_string(mr.dims()));
    }
    PreparedPair p{ct, mr, branch_gradient_map(ct), branch_gradient_map(mr), {}, {}};
    p.mr_features = mind_features(p.mr, mind);
    p.gmr_features = mind_features(p.gmr, mind);
    return p;
}

// ---------------------------------------------------------------------------
// Tape recording shared by training, inference and instance optimization.

namespace {

struct BoundModel {
    std::vector<Var> net_i;
    std::vector<Var> net_g;
    std::vector<Var> fusion;
};

BoundModel bind_model(Tape& tape, const TrainedModel& m, bool requires_grad) {
    BoundModel b;
    const bool mono = m.config.fusion_mode == FusionMode::kMono;
    b.net_i = bind_params(tape, m.net_i.params, requires_grad);
    if (!mono) b.net_g = bind_params(tape, m.net_g.params, requires_grad);
    if (m.fusion) b.fusion = bind_params(tape, m.fusion->named(), requires_grad);
    return b;
}

struct DualNodes {
    Var phi_i;
    Var phi_g;
    Var phi_ig;
    Var warped_ct;
    Var warped_gct;
};

// Fusion, warps and objective given the two branch fields (phi_g may be invalid in mono mode).
DualNodes record_fusion_and_warp(Tape& tape, FusionMode mode, const std::vector<Var>& fusion, Var phi_i, Var phi_g,
                                 Var ct, Var gct) {
    DualNodes n;
    n.phi_i = phi_i;
    n.phi_g = phi_g;
    switch (mode) {
        case FusionMode::kMono:
            n.phi_ig = phi_i;
            break;
        case FusionMode::kAverage:
            n.phi_ig = average_fuse(tape, phi_i, phi_g);
            break;
        case FusionMode::kGated:
            n.phi_ig = gated_fuse(tape, fusion, phi_i, phi_g);
            break;
    }
    n.warped_ct = warp(tape, ct, n.phi_ig);
    if (phi_g.valid()) n.warped_gct = warp(tape, gct, phi_g);
    return n;
}

LossNodes record_objective(Tape& tape, const TrainConfig& c, const DualNodes& n, const PreparedPair& pair) {
    const Var isim = mind_loss(tape, n.warped_ct, pair.mr_features, c.mind);
    const Var igreg = smoothness_loss(tape, n.phi_ig, c.smoothness);
    Var gsim;
    Var greg;
    if (n.phi_g.valid()) {
        gsim = mind_loss(tape, n.warped_gct, pair.gmr_features, c.mind);
        greg = smoothness_loss(tape, n.phi_g, c.smoothness);
    }
    return combine_losses(tape, isim, gsim, igreg, greg, c.weights);
}

DualNodes record_dual_branch(Tape& tape, const TrainedModel& m, const BoundModel& b, const PreparedPair& pair) {
    const Var ct = tape.leaf(Tensor::from_volume(pair.ct));
    const Var mr = tape.leaf(Tensor::from_volume(pair.mr));
    const Var gct = tape.leaf(Tensor::from_volume(pair.gct));
    const Var phi_i = predict_field(m.net_i, b.net_i, tape, ct, mr);
    Var phi_g;
    if (m.config.fusion_mode != FusionMode::kMono) {
        const Var gmr = tape.leaf(Tensor::from_volume(pair.gmr));
        phi_g = predict_field(m.net_g, b.net_g, tape, gct, gmr);
    }
    return record_fusion_and_warp(tape, m.config.fusion_mode, b.fusion, phi_i, phi_g, ct, gct);
}

std::vector<Var> flatten(const BoundModel& b) {
    std::vector<Var> all = b.net_i;
    all.insert(all.end(), b.net_g.begin(), b.net_g.end());
    all.insert(all.end(), b.fusion.begin(), b.fusion.end());
    return all;
}

void check_finite_report(const LossReport& r, int iter) {
    if (!std::isfinite(r.total)) {
        throw NonFiniteError("non-finite loss at iteration " + std::to_string(iter) + " (isim=" + fmt(r.isim) +
                             ", gsim=" + fmt(r.gsim) + ", igreg=" + fmt(r.igreg) + ", greg=" + fmt(r.greg) + ")");
    }
}

Volume to_volume_like(const Tensor& t, const Volume& like) { return Volume(like.dims(), like.spacing(), t.storage()); }

}  // namespace

DualBranchOutput dual_branch_forward(const TrainedModel& model, const Volume& ct, const Volume& mr,
                                     const Volume& gct, const Volume& gmr) {
    const Dims d = ct.dims();
    if (mr.dims() != d || gct.dims() != d || gmr.dims() != d) {
        throw DimensionMismatch("dual_branch_forward: all four volumes must share dims " + to_string(d));
    }
    Tape tape;
    const BoundModel b = bind_model(tape, model, false);
    PreparedPair pair{ct, mr, gct, gmr, {}, {}};
    const DualNodes n = record_dual_branch(tape, model, b, pair);
    DualBranchOutput out{DeformationField::from_tensor(tape.value(n.phi_i)),
                         identity_field(d),
                         DeformationField::from_tensor(tape.value(n.phi_ig)),
                         to_volume_like(tape.value(n.warped_ct), ct),
                         gct};
    if (n.phi_g.valid()) {
        out.phi_g = DeformationField::from_tensor(tape.value(n.phi_g));
        out.warped_gct = to_volume_like(tape.value(n.warped_gct), gct);
    }
    return out;
}

TrainedModel train_dual_branch(std::span<const VolumePair> pairs, const TrainConfig& config,
                               const CheckpointFn& on_checkpoint) {
    config.validate();
    if (pairs.empty()) throw std::invalid_argument("train_dual_branch needs at least one pair");

    std::vector<PreparedPair> prepared;
    prepared.reserve(pairs.size());
    for (const auto& p : pairs) {
        check_unet_input(p.moving.dims());
        prepared.push_back(prepare_pair(p.moving, p.fixed, config.mind));
    }

    std::vector<std::size_t> order(prepared.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    CounterRng shuffle(config.seed, 0x0de5);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);

    TrainedModel model = init_model(config);
    AdamState adam;
    const std::vector<Tensor*> params = model.trainable();
    std::vector<Tensor> grads;
    std::vector<const Tensor*> grad_ptrs;

    for (int it = 0; it < config.iterations; ++it) {
        const PreparedPair& pair = prepared[order[static_cast<std::size_t>(it) % order.size()]];
        Tape tape;
        const BoundModel bound = bind_model(tape, model, true);
        const DualNodes nodes = record_dual_branch(tape, model, bound, pair);
        const LossNodes loss = record_objective(tape, config, nodes, pair);
        const LossReport report = report_from(tape, loss, config.weights);
        check_finite_report(report, it);
        tape.backward(loss.total);

        const std::vector<Var> vars = flatten(bound);
        grads.clear();
        for (const Var& v : vars) grads.push_back(tape.grad(v));
        grad_ptrs.clear();
        for (const Tensor& g : grads) grad_ptrs.push_back(&g);
        adam_step(adam, params, grad_ptrs, config.learning_rate);

        model.history.push_back(report);
        if (on_checkpoint && config.checkpoint_interval > 0 && (it + 1) % config.checkpoint_interval == 0) {
            on_checkpoint(model, it + 1);
        }
    }
    return model;
}

Registration register_pair(const TrainedModel& model, const Volume& ct, const Volume& mr) {
    check_unet_input(ct.dims());
    const PreparedPair pair = prepare_pair(ct, mr, model.config.mind);
    Tape tape;
    const BoundModel b = bind_model(tape, model, false);
    const DualNodes n = record_dual_branch(tape, model, b, pair);
    const LossNodes loss = record_objective(tape, model.config, n, pair);
    return Registration{DeformationField::from_tensor(tape.value(n.phi_ig)), to_volume_like(tape.value(n.warped_ct), ct),
                        report_from(tape, loss, model.config.weights)};
}

InstanceResult instance_optimize(const Volume& ct, const Volume& mr, const TrainConfig& config) {
    config.validate();
    const PreparedPair pair = prepare_pair(ct, mr, config.mind);
    const Dims d = ct.dims();
    const bool mono = config.fusion_mode == FusionMode::kMono;

    Tensor phi_i(Shape{3, d});
    Tensor phi_g(Shape{3, d});
    std::optional<GatedFusionParams> fusion;
    if (config.fusion_mode == FusionMode::kGated) fusion = init_gated_fusion(config.seed, config.zero_gate_init);

    std::vector<Tensor*> params{&phi_i};
    if (!mono) params.push_back(&phi_g);
    if (fusion) {
        for (Tensor* t : {&fusion->gate_w, &fusion->gate_b, &fusion->bottleneck_w, &fusion->bottleneck_b}) {
            params.push_back(t);
        }
    }

    AdamState adam;
    InstanceResult result;
    for (int it = 0; it < config.iterations; ++it) {
        Tape tape;
        const Var vi = tape.leaf(phi_i, true);
        const Var vg = mono ? Var{} : tape.leaf(phi_g, true);
        std::vector<Var> fusion_vars;
        if (fusion) fusion_vars = bind_params(tape, fusion->named(), true);
        const Var ct_v = tape.leaf(Tensor::from_volume(pair.ct));
        const Var gct_v = tape.leaf(Tensor::from_volume(pair.gct));
        const DualNodes nodes = record_fusion_and_warp(tape, config.fusion_mode, fusion_vars, vi, vg, ct_v, gct_v);
        const LossNodes loss = record_objective(tape, config, nodes, pair);
        const LossReport report = report_from(tape, loss, config.weights);
        check_finite_report(report, it);
        tape.backward(loss.total);

        std::vector<Tensor> grads;
        grads.push_back(tape.grad(vi));
        if (!mono) grads.push_back(tape.grad(vg));
        for (const Var& v : fusion_vars) grads.push_back(tape.grad(v));
        std::vector<const Tensor*> grad_ptrs;
        for (const Tensor& g : grads) grad_ptrs.push_back(&g);
        adam_step(adam, params, grad_ptrs, config.learning_rate);
        result.history.push_back(report);
    }

    result.phi_i = DeformationField::from_tensor(phi_i);
    result.phi_g = DeformationField::from_tensor(phi_g);
    switch (config.fusion_mode) {
        case FusionMode::kMono:
            result.phi_ig = result.phi_i;
            break;
        case FusionMode::kAverage:
            result.phi_ig = average_fuse(result.phi_i, result.phi_g);
            break;
        case FusionMode::kGated:
            result.phi_ig = gated_fuse(*fusion, result.phi_i, result.phi_g);
            break;
    }
    return result;
}

std::string loss_history_csv(std::span<const LossReport> history, int first_iter) {
    std::string out = "iter,isim,gsim,igreg,greg,total\n";
    for (std::size_t i = 0; i < history.size(); ++i) {
        const auto& r = history[i];
        out += std::to_string(first_iter + static_cast<int>(i)) + "," + fmt(r.isim) + "," + fmt(r.gsim) + "," +
               fmt(r.igreg) + "," + fmt(r.greg) + "," + fmt(r.total) + "\n";
    }
    return out;
}

}  // namespace gradreg
