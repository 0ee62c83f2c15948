#pragma once

#include <stdexcept>
#include <string>

namespace dgve {

// Base for every error raised by the library. The CLI maps these to exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid numeric parameter (out of range, non-normalized kernel, ...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

// Tensor/image dimensions that do not fit an operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Operation invoked on an object in the wrong state (empty history, missing weights).
class StateError : public Error {
 public:
  using Error::Error;
};

// Value went non-finite or left its admissible domain.
class NumericError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace dgve
