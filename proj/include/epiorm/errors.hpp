#pragma once

#include <stdexcept>
#include <string>

namespace epiorm {

// Base of every error the library raises. The CLI maps ValidationError
// subclasses to exit code 1 and everything else to exit code 2.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ValidationError : Error {
  using Error::Error;
};

struct RangeError : ValidationError {
  using ValidationError::ValidationError;
};

struct ArgumentError : ValidationError {
  using ValidationError::ValidationError;
};

struct ShapeError : ValidationError {
  using ValidationError::ValidationError;
};

struct BorderError : ValidationError {
  using ValidationError::ValidationError;
};

struct ParseError : ValidationError {
  using ValidationError::ValidationError;
};

struct LoadError : ValidationError {
  using ValidationError::ValidationError;
};

// Raised when training diverges (NaN/Inf loss).
struct NumericError : Error {
  using Error::Error;
};

}  // namespace epiorm
