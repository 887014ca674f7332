#include "gradreg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <set>
#include <stdexcept>

namespace gradreg {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_same_dims(const Dims& a, const Dims& b, const char* what) {
    if (a != b) throw DimensionMismatch(std::string(what) + ": " + to_string(a) + " vs " + to_string(b));
}

// One-dimensional squared distance transform of f along a strided line.
// d(p) = min_q f(q) + (w (p - q))^2, skipping infinite samples.
void edt_line(double* f, std::size_t n, std::size_t stride, double w, std::vector<double>& scratch_f,
              std::vector<std::size_t>& v, std::vector<double>& z) {
    scratch_f.resize(n);
    for (std::size_t i = 0; i < n; ++i) scratch_f[i] = f[i * stride];
    v.clear();
    z.clear();
    const double w2 = w * w;
    for (std::size_t q = 0; q < n; ++q) {
        if (scratch_f[q] == kInf) continue;
        const double fq = scratch_f[q] + w2 * static_cast<double>(q) * static_cast<double>(q);
        while (!v.empty()) {
            const std::size_t r = v.back();
            const double fr = scratch_f[r] + w2 * static_cast<double>(r) * static_cast<double>(r);
            const double s = (fq - fr) / (2.0 * w2 * static_cast<double>(q - r));
            if (s <= z.back()) {
                v.pop_back();
                z.pop_back();
            } else {
                v.push_back(q);
                z.push_back(s);
                break;
            }
        }
        if (v.empty()) {
            v.push_back(q);
            z.push_back(-kInf);
        }
    }
    if (v.empty()) return;  // the line stays at infinity
    std::size_t k = 0;
    for (std::size_t p = 0; p < n; ++p) {
        while (k + 1 < v.size() && z[k + 1] < static_cast<double>(p)) ++k;
        const double d = w * (static_cast<double>(p) - static_cast<double>(v[k]));
        f[p * stride] = scratch_f[v[k]] + d * d;
    }
}

}  // namespace

double dice(const LabelMask& a, const LabelMask& b, std::int32_t label) {
    check_same_dims(a.dims(), b.dims(), "dice");
    std::size_t na = 0, nb = 0, both = 0;
    for (std::size_t i = 0; i < a.labels().size(); ++i) {
        const bool in_a = a.labels()[i] == label;
        const bool in_b = b.labels()[i] == label;
        na += in_a;
        nb += in_b;
        both += in_a && in_b;
    }
    if (na == 0 && nb == 0) return 1.0;
    return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

std::vector<std::size_t> surface_voxels(const LabelMask& m, std::int32_t label) {
    const Dims& d = m.dims();
    std::vector<std::size_t> out;
    auto inside = [&](int x, int y, int z) {
        return x >= 0 && y >= 0 && z >= 0 && x < d.nx && y < d.ny && z < d.nz && m.at(x, y, z) == label;
    };
    for (int z = 0; z < d.nz; ++z) {
        for (int y = 0; y < d.ny; ++y) {
            for (int x = 0; x < d.nx; ++x) {
                if (m.at(x, y, z) != label) continue;
                if (!inside(x - 1, y, z) || !inside(x + 1, y, z) || !inside(x, y - 1, z) || !inside(x, y + 1, z) ||
                    !inside(x, y, z - 1) || !inside(x, y, z + 1)) {
                    out.push_back(d.index(x, y, z));
                }
            }
        }
    }
    return out;
}

std::vector<double> squared_edt(const Dims& dims, std::span<const std::uint8_t> seeds, const Spacing& spacing) {
    if (seeds.size() != dims.size()) throw DimensionMismatch("squared_edt: seed count does not match dims");
    std::vector<double> f(dims.size());
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = seeds[i] ? 0.0 : kInf;

    std::vector<double> scratch;
    std::vector<std::size_t> v;
    std::vector<double> z;
    const auto nx = static_cast<std::size_t>(dims.nx);
    const auto ny = static_cast<std::size_t>(dims.ny);
    const auto nz = static_cast<std::size_t>(dims.nz);
    for (std::size_t k = 0; k < nz; ++k) {
        for (std::size_t j = 0; j < ny; ++j) edt_line(&f[(k * ny + j) * nx], nx, 1, spacing.sx, scratch, v, z);
    }
    for (std::size_t k = 0; k < nz; ++k) {
        for (std::size_t i = 0; i < nx; ++i) edt_line(&f[k * ny * nx + i], ny, nx, spacing.sy, scratch, v, z);
    }
    for (std::size_t j = 0; j < ny; ++j) {
        for (std::size_t i = 0; i < nx; ++i) edt_line(&f[j * nx + i], nz, nx * ny, spacing.sz, scratch, v, z);
    }
    return f;
}

double asd(const LabelMask& a, const LabelMask& b, std::int32_t label, const Spacing& spacing) {
    check_same_dims(a.dims(), b.dims(), "asd");
    const auto sa = surface_voxels(a, label);
    const auto sb = surface_voxels(b, label);
    if (sa.empty() || sb.empty()) throw std::invalid_argument("asd: label " + std::to_string(label) + " is empty");

    auto directed = [&](const std::vector<std::size_t>& from, const std::vector<std::size_t>& to) {
        std::vector<std::uint8_t> seeds(a.dims().size(), 0);
        for (std::size_t i : to) seeds[i] = 1;
        const auto dist2 = squared_edt(a.dims(), seeds, spacing);
        double sum = 0.0;
        for (std::size_t i : from) sum += std::sqrt(dist2[i]);
        return sum / static_cast<double>(from.size());
    };
    return 0.5 * (directed(sa, sb) + directed(sb, sa));
}

double field_rmse(const DeformationField& f, const DeformationField& gt, const LabelMask* mask) {
    check_same_dims(f.dims(), gt.dims(), "field_rmse");
    if (mask) check_same_dims(f.dims(), mask->dims(), "field_rmse mask");
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < f.dims().size(); ++i) {
        if (mask && mask->labels()[i] == 0) continue;
        for (int c = 0; c < 3; ++c) {
            const double d = f.at(c, i) - gt.at(c, i);
            sum += d * d;
        }
        ++count;
    }
    return count == 0 ? 0.0 : std::sqrt(sum / static_cast<double>(count));
}

EvalReport evaluate_case(const std::string& case_id, const LabelMask& moving_mask, const LabelMask& fixed_mask,
                         const DeformationField& field, const DeformationField* gt_field) {
    check_same_dims(moving_mask.dims(), fixed_mask.dims(), "evaluate_case");
    check_same_dims(moving_mask.dims(), field.dims(), "evaluate_case field");
    const LabelMask warped = warp_nearest(moving_mask, field);
    std::set<std::int32_t> labels;
    for (auto l : moving_mask.label_set()) labels.insert(l);
    for (auto l : fixed_mask.label_set()) labels.insert(l);

    auto safe_asd = [&](const LabelMask& m, std::int32_t label) {
        const auto in_m = std::find(m.labels().begin(), m.labels().end(), label) != m.labels().end();
        const auto in_f =
            std::find(fixed_mask.labels().begin(), fixed_mask.labels().end(), label) != fixed_mask.labels().end();
        return in_m && in_f ? asd(m, fixed_mask, label, fixed_mask.spacing()) : std::nan("");
    };

    EvalReport report{case_id, {}, std::nullopt};
    for (std::int32_t label : labels) {
        report.labels.push_back({label, dice(moving_mask, fixed_mask, label), dice(warped, fixed_mask, label),
                                 safe_asd(moving_mask, label), safe_asd(warped, label)});
    }
    if (gt_field) report.field_rmse = field_rmse(field, *gt_field, &fixed_mask);
    return report;
}

std::string eval_csv(std::span<const EvalReport> reports) {
    std::string out = "case,label,dice_before,dice_after,asd_before,asd_after,field_rmse\n";
    char buf[256];
    for (const auto& r : reports) {
        std::string rmse;
        if (r.field_rmse) {
            std::snprintf(buf, sizeof buf, "%.10g", *r.field_rmse);
            rmse = buf;
        }
        for (const auto& l : r.labels) {
            std::snprintf(buf, sizeof buf, "%s,%d,%.10g,%.10g,%.10g,%.10g,", r.case_id.c_str(), l.label, l.dice_before,
                          l.dice_after, l.asd_before, l.asd_after);
            out += buf + rmse + "\n";
        }
    }
    return out;
}

}  // namespace gradreg
