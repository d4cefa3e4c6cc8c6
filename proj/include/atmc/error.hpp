#pragma once

#include <stdexcept>
#include <string>

namespace atmc {

/// Shape or argument contract violated by the caller.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// NaN/Inf produced or consumed where finite values are required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Misuse of the compute graph (e.g. backward called twice).
class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Malformed input files: IDX datasets, checkpoints, CSV.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid user configuration (CLI flags, pipeline specs).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace atmc
