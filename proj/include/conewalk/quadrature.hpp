#pragma once

#include <cmath>
#include <limits>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "conewalk/errors.hpp"

namespace conewalk {

/// Adaptive Gauss-Kronrod (15-point) integration with an absolute-error
/// target and a hard refinement cap. Integrands here are smooth rapidly
/// decaying Gaussian combinations; infinite tails are truncated by the
/// callers at 12 standard deviations.
template <typename F>
double integrate(F&& f, double a, double b, double abs_tol = 1e-10,
                 unsigned max_depth = 15) {
    if (a == b) return 0.0;
    double error = 0.0;
    const double value =
        boost::math::quadrature::gauss_kronrod<double, 15>::integrate(
            f, a, b, max_depth, 1e-14, &error);
    if (!(error <= abs_tol) && !(error <= 1e-12 * std::abs(value)))
        throw QuadratureFailureError("integrate: error estimate " +
                                     std::to_string(error) +
                                     " above tolerance");
    return value;
}

}  // namespace conewalk
