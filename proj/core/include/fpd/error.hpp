#pragma once

#include <stdexcept>
#include <string>

namespace fpd {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A precondition on inputs or configuration was violated.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf showed up where finite values were required.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace fpd
