#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gradreg/fusion.hpp"
#include "gradreg/losses.hpp"
#include "gradreg/net.hpp"
#include "gradreg/volume.hpp"
#include "gradreg/warp.hpp"

namespace gradreg {

enum class FusionMode {
    kAverage,
    kGated,
    /// Ablation: image branch only, fused field is the image-branch field.
    kMono,
};

std::string to_string(FusionMode mode);
FusionMode parse_fusion_mode(const std::string& s);

struct TrainConfig {
    double learning_rate = 1e-5;
    int batch_size = 1;
    int iterations = 1000;
    LossWeights weights = LossWeights::pig_kidney();
    FusionMode fusion_mode = FusionMode::kGated;
    std::uint64_t seed = 0;
    int checkpoint_interval = 0;
    MindParams mind;
    UNetConfig unet;
    SmoothnessMode smoothness = SmoothnessMode::kL2Sq;
    /// Start the gate conv at exactly zero weights (gated == average at init).
    bool zero_gate_init = false;

    /// Iterations may be zero (returns the initialization).
    void validate() const;
};

/// Flat key=value text, one field per line; round-trips through parse.
std::string to_config_text(const TrainConfig& config);
TrainConfig parse_train_config(const std::string& text, TrainConfig base = {});
/// Applies a single key=value; unknown keys throw std::invalid_argument.
void apply_config_value(TrainConfig& config, const std::string& key, const std::string& value);

struct TrainedModel {
    Network net_i;
    Network net_g;
    std::optional<GatedFusionParams> fusion;  // present in gated mode
    TrainConfig config;
    std::vector<LossReport> history;

    /// Pointers to every tensor the optimizer updates in this mode.
    std::vector<Tensor*> trainable();
    bool operator==(const TrainedModel& other) const;
};

TrainedModel init_model(const TrainConfig& config);

struct VolumePair {
    Volume moving;  // "CT"
    Volume fixed;   // "MR"
};

/// A pair with its derived branch inputs and fixed-side descriptors.
struct PreparedPair {
    Volume ct;
    Volume mr;
    Volume gct;
    Volume gmr;
    MindFeatures mr_features;
    MindFeatures gmr_features;
};

PreparedPair prepare_pair(const Volume& ct, const Volume& mr, const MindParams& mind);

struct DualBranchOutput {
    DeformationField phi_i;
    DeformationField phi_g;   // zero field in mono mode
    DeformationField phi_ig;
    Volume warped_ct;
    Volume warped_gct;
};

/// phi_i from (ct, mr), phi_g from (gct, gmr), phi_ig = fuse(phi_i, phi_g);
/// ct is warped by phi_ig and gct by phi_g.
DualBranchOutput dual_branch_forward(const TrainedModel& model, const Volume& ct, const Volume& mr,
                                     const Volume& gct, const Volume& gmr);

/// Called with the model and the number of completed iterations.
using CheckpointFn = std::function<void(const TrainedModel&, int)>;

/// Unsupervised: only image pairs are consumed. Pairs are visited in a seeded
/// cyclic order; every iteration takes one pair (batch size 1).
TrainedModel train_dual_branch(std::span<const VolumePair> pairs, const TrainConfig& config,
                               const CheckpointFn& on_checkpoint = {});

struct Registration {
    DeformationField field;
    Volume warped;
    LossReport report;
};

Registration register_pair(const TrainedModel& model, const Volume& ct, const Volume& mr);

struct InstanceResult {
    DeformationField phi_i;
    DeformationField phi_g;
    DeformationField phi_ig;
    std::vector<LossReport> history;
};

/// Minimizes the same objective over two free displacement fields (plus the
/// gate in gated mode) for a single pair, without networks.
InstanceResult instance_optimize(const Volume& ct, const Volume& mr, const TrainConfig& config);

/// CSV with header iter,isim,gsim,igreg,greg,total.
std::string loss_history_csv(std::span<const LossReport> history, int first_iter = 1);

// Checkpoint archive.
void save_checkpoint(const TrainedModel& model, const std::filesystem::path& path);
TrainedModel load_checkpoint(const std::filesystem::path& path);
std::string checkpoint_bytes(const TrainedModel& model);
TrainedModel parse_checkpoint(const std::string& bytes);

}  // namespace gradreg
