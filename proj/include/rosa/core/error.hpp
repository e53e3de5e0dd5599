#pragma once

#include <stdexcept>
#include <string>

namespace rosa {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition on an argument (shape, range, ordering) was violated.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Tensor shape incompatibility; the message names the op and the dims.
class ShapeError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

/// A numerical computation produced or received a non-finite value.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace rosa
