#pragma once

#include <array>
#include <vector>

#include "gradreg/tape.hpp"
#include "gradreg/volume.hpp"
#include "gradreg/warp.hpp"

namespace gradreg {

/// Self-similarity descriptor configuration.
struct MindParams {
    /// Neighbourhood offsets r; default is the six face neighbours.
    std::vector<std::array<int, 3>> offsets{{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
    /// Cubic patch radius; 1 means 3x3x3 patches.
    int patch_radius = 1;
    /// Lower clamp on the local variance estimate.
    double variance_floor = 1e-6;

    void validate() const;
    /// Smallest extent each axis must have.
    int min_extent() const { return 2 * patch_radius + 2; }
};

/// Per-voxel descriptor, one channel per offset; values in (0, 1].
using MindFeatures = Tensor;

/// For offset r: D_r(x) is the mean squared difference between the patches at
/// x and x + r (edge-replicated), V(x) = max(eps, mean_r D_r(x)) and the
/// feature is exp(-D_r(x) / V(x)).
MindFeatures mind_features(const Volume& v, const MindParams& params = {});

/// Mean absolute feature difference over all voxels and offsets.
double mind_loss(const Volume& warped, const Volume& fixed, const MindParams& params = {});

/// Differentiable with respect to `warped` (single channel). `fixed_features`
/// is precomputed and treated as constant.
Var mind_loss(Tape& tape, Var warped, const MindFeatures& fixed_features, const MindParams& params = {});

enum class SmoothnessMode {
    kL2,    ///< per-voxel Euclidean norm of the 9-entry forward-difference Jacobian
    kL2Sq,  ///< squared entries (diffusion regularizer)
};

/// Forward differences per channel and axis, zero on the last slice;
/// normalized by the voxel count.
double smoothness_loss(const DeformationField& f, SmoothnessMode mode = SmoothnessMode::kL2Sq);
Var smoothness_loss(Tape& tape, Var field, SmoothnessMode mode = SmoothnessMode::kL2Sq);

struct LossWeights {
    double alpha = 0.4;  // gradient-map similarity
    double beta = 0.3;   // gradient-branch field smoothness
    double gamma = 0.8;  // fused field smoothness

    static LossWeights pig_kidney() { return {0.4, 0.3, 0.8}; }
    static LossWeights abdomen() { return {0.5, 0.5, 1.0}; }

    void validate() const;
};

struct LossReport {
    double isim = 0.0;
    double gsim = 0.0;
    double igreg = 0.0;
    double greg = 0.0;
    double total = 0.0;
};

/// total = (isim + alpha*gsim) + (gamma*igreg + beta*greg)
LossReport make_report(double isim, double gsim, double igreg, double greg, const LossWeights& w);

LossReport total_loss(const Volume& warped_ct, const Volume& fixed_mr, const Volume& warped_gct,
                      const Volume& fixed_gmr, const DeformationField& f_ig, const DeformationField& f_g,
                      const LossWeights& w, const MindParams& params = {},
                      SmoothnessMode mode = SmoothnessMode::kL2Sq);

/// Scalar nodes of the objective as recorded on a tape.
struct LossNodes {
    Var isim;
    Var gsim;
    Var igreg;
    Var greg;
    Var total;
};

/// Records the weighted objective. `gsim`/`greg` may be invalid Vars for the
/// single-branch ablation, in which case their terms are omitted.
LossNodes combine_losses(Tape& tape, Var isim, Var gsim, Var igreg, Var greg, const LossWeights& w);

LossReport report_from(const Tape& tape, const LossNodes& nodes, const LossWeights& w);

}  // namespace gradreg
