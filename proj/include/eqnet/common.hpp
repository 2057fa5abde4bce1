#pragma once

// Shared error taxonomy. Every module throws one of these; the CLI maps
// user/config/format errors to exit code 2 and numerical failures to 1.

#include <stdexcept>
#include <string>
#include <vector>

namespace eqnet {

using Vec = std::vector<double>;

// Bad tensor/vector shapes passed between components.
struct ShapeError : std::invalid_argument {
  explicit ShapeError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Non-finite or otherwise unusable numeric input.
struct InvalidInputError : std::invalid_argument {
  explicit InvalidInputError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Malformed parameter ranges (lo >= hi, negative counts, ...).
struct InvalidRangeError : std::invalid_argument {
  explicit InvalidRangeError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Inconsistent or unsupported configuration (variant mismatches included).
struct ConfigError : std::invalid_argument {
  explicit ConfigError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Unreadable or inconsistent file contents.
struct FormatError : std::runtime_error {
  explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

// A forward cache replayed against weights it was not built from.
struct InvalidCacheError : std::logic_error {
  explicit InvalidCacheError(const std::string& msg) : std::logic_error(msg) {}
};

// Input outside the mathematical domain of an operator.
struct DomainError : std::runtime_error {
  explicit DomainError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace eqnet
