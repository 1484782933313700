#include "phyadapt/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "phyadapt/rng.hpp"

namespace phyadapt {

GradCheckReport finite_difference_check(const std::function<double()>& loss_fn,
                                        const std::vector<Tensor*>& params,
                                        const std::vector<Tensor>& analytic,
                                        double step, int max_coords, uint64_t sample_seed,
                                        double scale_floor,
                                        const std::vector<std::string>& names) {
    if (step <= 0.0) throw ShapeError("finite_difference_check: step must be positive");
    if (params.size() != analytic.size()) {
        throw ShapeError("finite_difference_check: params/analytic count mismatch");
    }
    Rng rng(derive_seed(sample_seed, "fd-coords"));
    GradCheckReport report;
    for (size_t p = 0; p < params.size(); ++p) {
        Tensor& t = *params[p];
        if (t.size() != analytic[p].size()) {
            throw ShapeError("finite_difference_check: gradient shape mismatch for param " +
                             std::to_string(p));
        }
        std::vector<int64_t> coords;
        if (t.size() <= 64 || t.size() <= max_coords) {
            coords.resize(static_cast<size_t>(t.size()));
            std::iota(coords.begin(), coords.end(), 0);
        } else {
            coords.reserve(static_cast<size_t>(max_coords));
            for (int i = 0; i < max_coords; ++i)
                coords.push_back(rng.uniform_int(static_cast<int>(t.size())));
        }
        for (int64_t c : coords) {
            const double saved = t[c];
            t[c] = saved + step;
            const double lp = loss_fn();
            t[c] = saved - step;
            const double lm = loss_fn();
            t[c] = saved;
            const double fd = (lp - lm) / (2.0 * step);
            const double an = analytic[p][c];
            const double denom = std::max({std::abs(fd), std::abs(an), scale_floor});
            const double rel = std::abs(fd - an) / denom;
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst_param = p < names.size() ? names[p] : "param" + std::to_string(p);
                report.worst_coord = c;
                report.analytic_at_worst = an;
                report.numeric_at_worst = fd;
            }
        }
    }
    return report;
}

}  // namespace phyadapt
