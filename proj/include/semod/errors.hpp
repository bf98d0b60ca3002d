#pragma once

#include <stdexcept>
#include <string>

namespace semod {

// Base for every error the library raises on bad caller input or bad files.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A value is outside its documented domain (range, enum, count).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Tensor/image shapes do not agree.
class DimensionError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// A required checkpoint, provider or config entry is missing or inconsistent.
class ConfigurationError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Malformed input file. The message carries the location when known.
class ParseError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Failure while running (NaN loss, I/O write failure, ...).
class RuntimeFailure : public Error {
 public:
  using Error::Error;
};

}  // namespace semod
