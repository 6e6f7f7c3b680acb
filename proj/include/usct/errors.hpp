#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace usct {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Malformed file content. `offset` is the byte position where parsing gave up.
struct ParseError : Error {
    ParseError(const std::string& what, std::size_t offset)
        : Error(what + " (byte " + std::to_string(offset) + ")"), offset(offset) {}
    std::size_t offset;
};

/// Iterative solver did not reach the requested tolerance.
struct SolverFailure : Error {
    SolverFailure(const std::string& what, double residual)
        : Error(what + " (residual " + std::to_string(residual) + ")"), residual(residual) {}
    double residual;
};

/// Every candidate patch fell below the variance floor.
struct UndefinedSimilarity : Error {
    using Error::Error;
};

struct RegistrationFailure : Error {
    using Error::Error;
};

/// Transformed ultrasound region does not intersect the CT grid.
struct EmptyOverlap : Error {
    using Error::Error;
};

/// Metric has no defined value on the given inputs (zero variance, empty masks).
struct UndefinedMetric : Error {
    using Error::Error;
};

}  // namespace usct
