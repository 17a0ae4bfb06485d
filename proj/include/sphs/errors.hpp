#pragma once

#include <stdexcept>
#include <string>

namespace sphs {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input document (syntax or missing keys).
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Matrix or vector dimensions do not fit together.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A structural constraint (skew-symmetry, PSD, ...) is violated. The message
/// names the constraint.
class StructureError : public Error {
 public:
  using Error::Error;
};

/// NaN or infinity where a finite value is required.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

/// Matrix expected to be positive semidefinite has a significantly negative
/// eigenvalue.
class NotPsdError : public Error {
 public:
  using Error::Error;
};

/// Precondition of a constructive operation failed; the message names which.
class PreconditionFailed : public Error {
 public:
  using Error::Error;
};

/// The available-storage control problem is unbounded below.
class InfeasibleError : public Error {
 public:
  using Error::Error;
};

class NumericalDivergence : public Error {
 public:
  using Error::Error;
};

/// Interconnection matrix Id - K diag(D^c) is (numerically) singular.
class SingularCoupling : public Error {
 public:
  using Error::Error;
};

class ResourceLimit : public Error {
 public:
  using Error::Error;
};

/// A user callback returned a non-finite value or a wrongly sized result.
class CallbackError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value (non-positive step, empty path count, ...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

}  // namespace sphs
