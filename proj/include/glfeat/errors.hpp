#pragma once

#include <stdexcept>
#include <string>

namespace glfeat {

// Base of every error raised by the library. The CLI maps the concrete
// subclasses onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor or image dimensions that violate a layer contract.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Unreadable, truncated or malformed inputs (files, manifests, configs).
class DataError : public Error {
 public:
  using Error::Error;
};

// Non-finite values or degenerate numerical configurations.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// Invalid arguments supplied by a caller.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

}  // namespace glfeat
