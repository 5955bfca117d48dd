#pragma once

#include <stdexcept>
#include <string>

namespace driftbench {

// Base for every failure the engine reports. The CLI maps subclasses to
// exit codes: ConfigError -> 2, IoError/DecodeError -> 4, anything else -> 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Rank or extent mismatches between tensors.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Out-of-range labels, degenerate batch sizes, invalid numeric arguments.
class ValueError : public Error {
 public:
  using Error::Error;
};

// Operations invoked in an unusable state (missing grads, incomplete matrices).
class StateError : public Error {
 public:
  using Error::Error;
};

// Non-finite values where finite ones are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Replay requested from an empty buffer.
class ReplayUnavailableError : public Error {
 public:
  using Error::Error;
};

// Dataset files that violate the documented record layout.
class SchemaError : public Error {
 public:
  using Error::Error;
};

// Malformed snapshot/checkpoint bytes.
class DecodeError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace driftbench
