#pragma once

#include <stdexcept>
#include <string>

namespace iccr {

// Shape/contract violations in tensor primitives.
struct DimensionError : std::runtime_error {
    explicit DimensionError(const std::string& what) : std::runtime_error(what) {}
};

// A primitive produced NaN/Inf, or an integrator blew up.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

// Noise abduction asked to invert a mechanism outside its domain.
struct AbductionError : std::runtime_error {
    explicit AbductionError(const std::string& what) : std::runtime_error(what) {}
};

// Inconsistent or invalid run configuration.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// OLS on a design with zero spread.
struct DegenerateDesignError : std::runtime_error {
    explicit DegenerateDesignError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace iccr
