#pragma once

#include <stdexcept>
#include <string>

namespace ecga {

// Shape disagreement between tensors (e.g. matmul inner extents).
struct DimensionError : std::runtime_error {
  explicit DimensionError(const std::string& what) : std::runtime_error(what) {}
};

// Caller violated an API precondition (bad label, loss not on tape, ...).
struct ContractError : std::runtime_error {
  explicit ContractError(const std::string& what) : std::runtime_error(what) {}
};

// Invalid configuration value or missing config field.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Malformed input file; message carries the line number where known.
struct ParseError : std::runtime_error {
  explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

// Loss or activation became NaN/Inf during a run.
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace ecga
