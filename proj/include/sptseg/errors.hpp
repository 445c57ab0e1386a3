#pragma once

#include <stdexcept>
#include <string>

namespace sptseg {

// Shape disagreement between operands.
struct DimensionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Precondition violated by the caller (bad label, empty subset, ...).
struct ContractError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A NaN or Inf appeared where only finite values are allowed.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace sptseg
