#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace srec {

// Error taxonomy shared by the library and the CLI (which maps the
// categories to process exit codes).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Invalid or inconsistent configuration (bad keys, violated constraints).
class ConfigError : public Error {
public:
    using Error::Error;
};

// Non-finite or otherwise out-of-domain scalar input.
class DomainError : public Error {
public:
    using Error::Error;
};

// Mismatched path/grid lengths.
class DimensionError : public Error {
public:
    using Error::Error;
};

// Malformed spatial grid (non-monotone knots, too few nodes).
class GridError : public Error {
public:
    using Error::Error;
};

// A documented invariant was violated at a call site.
class InvariantError : public Error {
public:
    using Error::Error;
};

// Numerical failure inside the solver (NaN propagation, negative variance).
class SolverError : public Error {
public:
    using Error::Error;
};

// Fixed-point iteration stopped without reaching the tolerance. Carries the
// residual history so callers can inspect the trajectory; `suggestion` is
// non-empty when the residuals look oscillatory and a smaller damping factor
// is likely to help.
class NonConvergenceError : public SolverError {
public:
    NonConvergenceError(const std::string& msg, std::vector<double> history,
                        std::string hint = {})
        : SolverError(msg), residual_history(std::move(history)), suggestion(std::move(hint)) {}

    std::vector<double> residual_history;
    std::string suggestion;
};

// Filesystem failures (unwritable output directory, missing artifacts).
class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace srec
