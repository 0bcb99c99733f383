#pragma once

#include <stdexcept>
#include <string>

namespace conewalk {

/// Nonnegative vector with zero sum (or a negative component) where a
/// direction was required.
struct ZeroVectorError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// A dual-walk or duality query on a DrawRecord that did not retain its
/// matrix sequence.
struct MissingMatricesError : std::logic_error {
    using std::logic_error::logic_error;
};

/// Grid-based operation requested for a dimension it does not support.
struct UnsupportedDimError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Poisson solve on a law whose expected cocycle increment has a
/// non-negligible stationary mean.
struct NotCenteredError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Adaptive quadrature did not reach the requested tolerance.
struct QuadratureFailureError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Monte Carlo cell too noisy relative to the theoretical value it is
/// compared against.
struct InsufficientSamplesError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Conditional-law comparison with fewer surviving trajectories than the
/// configured minimum.
struct InsufficientSurvivorsError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

}  // namespace conewalk
