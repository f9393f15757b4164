#pragma once

#include <stdexcept>

namespace san {

// Shape or extent mismatch between operands.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Invalid operator, block or model configuration (divisibility, footprint, ...).
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// API misuse, e.g. backward on a tensor that is not on the tape.
struct UsageError : std::logic_error {
  using std::logic_error::logic_error;
};

// Malformed or mismatching serialized data.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite values produced from finite inputs.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace san
