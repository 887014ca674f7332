#include "gradreg/fd_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace gradreg {

std::size_t FdReport::passed() const {
    return static_cast<std::size_t>(std::count_if(entries.begin(), entries.end(), [](const FdEntry& e) { return e.pass; }));
}

double FdReport::pass_fraction() const {
    if (entries.empty()) return 1.0;
    return static_cast<double>(passed()) / static_cast<double>(entries.size());
}

FdReport finite_difference_check(const std::function<double()>& f, std::span<double> params,
                                 std::span<const double> analytic, std::span<const std::size_t> indices,
                                 const FdOptions& options) {
    if (analytic.size() != params.size()) {
        throw std::invalid_argument("analytic gradient size does not match parameter count");
    }
    FdReport report;
    report.rtol = options.rtol;
    for (std::size_t idx : indices) {
        if (idx >= params.size()) throw std::out_of_range("finite difference index out of range");
        const double saved = params[idx];
        params[idx] = saved + options.h;
        const double fp = f();
        params[idx] = saved - options.h;
        const double fm = f();
        params[idx] = saved;

        FdEntry e;
        e.index = idx;
        e.analytic = analytic[idx];
        e.numeric = (fp - fm) / (2.0 * options.h);
        const double denom = std::max({std::abs(e.analytic), std::abs(e.numeric), options.abs_floor});
        e.rel_error = std::abs(e.analytic - e.numeric) / denom;
        e.pass = e.rel_error <= options.rtol;
        report.entries.push_back(e);
    }
    return report;
}

FdReport finite_difference_check(const std::function<double()>& f, std::span<double> params,
                                 std::span<const double> analytic, const FdOptions& options) {
    std::vector<std::size_t> all(params.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    return finite_difference_check(f, params, analytic, all, options);
}

}  // namespace gradreg
