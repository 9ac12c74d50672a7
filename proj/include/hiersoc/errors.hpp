#pragma once

#include <stdexcept>
#include <string>

namespace hiersoc {

// Thrown when tensor/clip dimensions do not match an operation's contract.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Thrown for invalid configuration values (CLI exit code 2).
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Thrown for malformed or inconsistent data files (CLI exit code 3).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Thrown when training or evaluation produces a non-finite value (CLI exit code 4).
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace hiersoc
