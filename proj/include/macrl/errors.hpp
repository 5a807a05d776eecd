#pragma once

#include <stdexcept>
#include <string>

namespace macrl {

// Base class for everything this library throws on purpose.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Operand shapes incompatible with an op. Messages name the op and both shapes.
struct ShapeError : Error {
  using Error::Error;
};

// Bad numeric input or non-finite values produced by a computation.
struct ValueError : Error {
  using Error::Error;
};

// Invalid configuration: unknown key, bad value, inconsistent settings.
struct ConfigError : Error {
  using Error::Error;
};

// File format or filesystem problems (datasets, checkpoints, configs).
struct IoError : Error {
  using Error::Error;
};

}  // namespace macrl
