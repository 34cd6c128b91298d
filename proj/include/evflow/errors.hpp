#pragma once

#include <stdexcept>
#include <string>

namespace evflow {

// Invalid arguments, malformed files, contract violations. CLI exit code 1.
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values, overflow, rejected decompositions. CLI exit code 2.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown when an eigendecomposition fails the reconstruction gate; callers
// retry with a fresh perturbation seed.
class DecompositionRejected : public NumericError {
public:
    explicit DecompositionRejected(const std::string& msg) : NumericError(msg) {}
};

}  // namespace evflow
