#pragma once

#include <stdexcept>
#include <string>

namespace esmap {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DimensionMismatch : Error {
    using Error::Error;
};

/// A covariance input whose factorization hit a non-positive pivot.
struct NotPositiveDefinite : Error {
    using Error::Error;
};

/// Sample covariance too close to singular for the parametric optimizer.
struct SingularCovariance : Error {
    using Error::Error;
};

/// The parametric objective is unbounded below on the budget hyperplane.
struct ParametricUnbounded : Error {
    using Error::Error;
};

/// Ill-conditioning inside the simplex solver or a failed post-solve
/// certificate. Kept distinct from infeasibility.
struct NumericalBreakdown : Error {
    using Error::Error;
};

/// A boundary row whose feasibility fractions do not bracket p = 1/2.
struct InsufficientSpan : Error {
    using Error::Error;
};

struct ParseError : Error {
    using Error::Error;
};

}  // namespace esmap
