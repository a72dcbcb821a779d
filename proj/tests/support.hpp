#pragma once

// Helpers shared by the unit tests and the acceptance binary: random tensors
// and a central finite-difference gradient checker.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "ncd/rng.hpp"
#include "ncd/tensor.hpp"

namespace ncd::testing {

inline Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(shape);
    for (double& v : t.values()) v = rng.uniform(lo, hi);
    return t;
}

// Relative error with the denominator floored at 1e-6: two gradients that are
// both below ~1e-10 compare as equal instead of amplifying rounding noise.
inline double relative_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

struct FdReport {
    double max_rel_err = 0.0;
    std::size_t checked = 0;
    std::size_t skipped = 0;  // coordinates inside an exclusion zone
};

// Compares `analytic` against central differences of `loss` with respect to
// every entry of `x` (which `loss` must read). `excluded(i)` may veto
// coordinates where the function has a kink within reach of the step.
inline FdReport check_gradient(std::span<double> x, std::span<const double> analytic, const std::function<double()>& loss,
                               double h = 1e-5, const std::function<bool(std::size_t)>& excluded = {}) {
    FdReport r;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (excluded && excluded(i)) {
            ++r.skipped;
            continue;
        }
        const double saved = x[i];
        x[i] = saved + h;
        const double up = loss();
        x[i] = saved - h;
        const double down = loss();
        x[i] = saved;
        const double numeric = (up - down) / (2.0 * h);
        r.max_rel_err = std::max(r.max_rel_err, relative_error(analytic[i], numeric));
        ++r.checked;
    }
    return r;
}

// Sum of elementwise products: turns a tensor-valued op into a scalar loss
// whose gradient with respect to the op's output is `weights`.
inline double weighted_sum(const Tensor& t, const Tensor& weights) {
    double s = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) s += t[i] * weights[i];
    return s;
}

} // namespace ncd::testing
