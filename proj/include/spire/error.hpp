#pragma once

#include <stdexcept>
#include <string>

namespace spire {

/// Invalid model specification, flag combination or option value.
class ConfigError : public std::invalid_argument {
public:
    explicit ConfigError(const std::string& what) : std::invalid_argument(what) {}
};

/// Input data that violates the Dataset invariants (or a malformed CSV row).
class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

/// A working model that places no mass where it is queried.
class DegenerateModelError : public std::runtime_error {
public:
    explicit DegenerateModelError(const std::string& what) : std::runtime_error(what) {}
};

/// Non-finite values, underflow, or an unmet integration tolerance.
class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace spire
