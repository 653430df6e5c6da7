#pragma once

#include <stdexcept>
#include <string>

namespace pcet {

// Error categories map one-to-one onto the CLI exit codes.

/// Bad configuration or out-of-order workflow (exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  static constexpr int kExitCode = 2;
};

/// Malformed input data: label rows, velodyne files, checkpoints (exit code 3).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  static constexpr int kExitCode = 3;
};

/// NaN/Inf produced inside the tensor engine (exit code 4).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  static constexpr int kExitCode = 4;
};

/// Incompatible tensor shapes. Message names both shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace pcet
