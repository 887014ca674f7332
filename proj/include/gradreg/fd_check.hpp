#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace gradreg {

struct FdEntry {
    std::size_t index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_error = 0.0;
    bool pass = false;
};

struct FdReport {
    std::vector<FdEntry> entries;
    double rtol = 0.0;

    std::size_t passed() const;
    double pass_fraction() const;
    bool all_pass() const { return passed() == entries.size(); }
};

struct FdOptions {
    double h = 1e-4;
    double rtol = 1e-3;
    /// Denominator floor for the relative error, so entries whose true
    /// gradient is zero are judged on absolute error below this scale.
    double abs_floor = 1e-8;
};

/// Compares analytic gradient entries against central differences
/// (f(θ+h) − f(θ−h)) / 2h. `f` reads the current contents of `params`;
/// every probed entry is restored afterwards.
FdReport finite_difference_check(const std::function<double()>& f, std::span<double> params,
                                 std::span<const double> analytic, std::span<const std::size_t> indices,
                                 const FdOptions& options = {});

/// Probes every entry.
FdReport finite_difference_check(const std::function<double()>& f, std::span<double> params,
                                 std::span<const double> analytic, const FdOptions& options = {});

}  // namespace gradreg
