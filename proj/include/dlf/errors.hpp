#pragma once

#include <stdexcept>
#include <string>

namespace dlf {

// Base of every error thrown by the library. The CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shapes or sizes that do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A documented precondition was violated by the caller.
class ContractViolation : public Error {
 public:
  using Error::Error;
};

// An operator or hyper-parameter value outside its admissible range.
class ParameterError : public Error {
 public:
  using Error::Error;
};

// Solver non-convergence, NaN/Inf during training, and similar.
class NumericError : public Error {
 public:
  using Error::Error;
};

class CacheInvalidError : public Error {
 public:
  using Error::Error;
};

class RegistryError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed or unsupported file contents.
class FormatError : public IoError {
 public:
  using IoError::IoError;
};

}  // namespace dlf
