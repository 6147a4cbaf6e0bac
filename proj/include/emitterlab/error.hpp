#pragma once

#include <stdexcept>
#include <string>

namespace emitterlab {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition on an argument was violated (out-of-range value, bad size).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// The two correlation timescales coalesce: A^2 - 4B is within tolerance of zero.
class DegenerateRootsError : public Error {
 public:
  using Error::Error;
};

/// beta*(tau2 - tau1) + tau2 <= 0, so no positive deshelving rate exists.
class NonPositiveDenominatorError : public Error {
 public:
  using Error::Error;
};

class EmptyChannelError : public Error {
 public:
  using Error::Error;
};

class UnsortedInputError : public Error {
 public:
  using Error::Error;
};

/// The potential grid does not leave enough hexagonal padding around the stack.
class DomainTooSmallError : public Error {
 public:
  using Error::Error;
};

class EigenSolverError : public Error {
 public:
  using Error::Error;
};

/// A power series contains a point whose parameters cannot come from a three-level emitter.
class InconsistentSeriesError : public Error {
 public:
  using Error::Error;
};

/// Malformed file contents (PTS1, CSV, JSON config).
class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace emitterlab
