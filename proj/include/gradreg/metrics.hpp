#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gradreg/volume.hpp"
#include "gradreg/warp.hpp"

namespace gradreg {

/// 2|A n B| / (|A| + |B|); 1 when both are empty, 0 when exactly one is.
double dice(const LabelMask& a, const LabelMask& b, std::int32_t label);

/// Linear indices (ascending) of label voxels with a 6-neighbour outside the
/// label; the grid border counts as outside.
std::vector<std::size_t> surface_voxels(const LabelMask& m, std::int32_t label);

/// Exact squared Euclidean distance (mm^2) from every voxel to the nearest
/// seed, separable lower-envelope algorithm. Infinity everywhere without seeds.
std::vector<double> squared_edt(const Dims& dims, std::span<const std::uint8_t> seeds, const Spacing& spacing);

/// Symmetric average surface distance in mm: the mean of the two directed
/// surface-to-surface mean distances. Throws if the label is empty on either side.
double asd(const LabelMask& a, const LabelMask& b, std::int32_t label, const Spacing& spacing);

/// RMS of per-voxel displacement difference norms; restricted to the non-zero
/// voxels of `mask` when given.
double field_rmse(const DeformationField& f, const DeformationField& gt, const LabelMask* mask = nullptr);

struct LabelEval {
    std::int32_t label = 0;
    double dice_before = 0.0;
    double dice_after = 0.0;
    double asd_before = 0.0;  // NaN when the label is missing on a side
    double asd_after = 0.0;
};

struct EvalReport {
    std::string case_id;
    std::vector<LabelEval> labels;
    std::optional<double> field_rmse;
};

/// Warps the moving mask with nearest-neighbour sampling and compares it with
/// the fixed mask for every label present in either.
EvalReport evaluate_case(const std::string& case_id, const LabelMask& moving_mask, const LabelMask& fixed_mask,
                         const DeformationField& field, const DeformationField* gt_field = nullptr);

/// Header case,label,dice_before,dice_after,asd_before,asd_after,field_rmse.
std::string eval_csv(std::span<const EvalReport> reports);

}  // namespace gradreg
