#pragma once

#include <stdexcept>
#include <string>

namespace jtwpa {

/// Invalid or inconsistent configuration (bad grid, N not divisible by P, ...).
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A numerical procedure failed to converge or lost accuracy.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A requested frequency lies outside the simulated grid.
class CoverageError : public std::out_of_range {
public:
    using std::out_of_range::out_of_range;
};

} // namespace jtwpa
