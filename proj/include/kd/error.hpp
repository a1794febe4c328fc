#pragma once

#include <stdexcept>
#include <string>

namespace kd {

/// Base class for all errors raised by this library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File could not be read or written (missing, truncated, permissions).
class IoError : public Error {
 public:
  using Error::Error;
};

/// Input bytes or text do not match the expected file format.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Two inputs that must agree (counts, alignment) do not.
class ConsistencyError : public Error {
 public:
  using Error::Error;
};

/// A value lies outside its documented range.
class RangeError : public Error {
 public:
  using Error::Error;
};

/// Not enough samples (or candidates) to satisfy a request.
class CapacityError : public Error {
 public:
  using Error::Error;
};

/// Dimensions too small for the requested construction.
class SizeError : public Error {
 public:
  using Error::Error;
};

/// A construction collapsed to a degenerate object (zero columns,
/// center inside its own distortion subspace, ...).
class DegeneracyError : public Error {
 public:
  using Error::Error;
};

/// Vector/matrix dimensions do not match.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A model violates its own invariants (zero weights, empty mixture).
class ModelError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value or combination of options.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Numerical underflow or other floating-point breakdown.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Loaded data fails a content check (row sums, probability ranges).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Persisted container written by an unsupported format version.
class VersionError : public Error {
 public:
  using Error::Error;
};

/// Persisted container is internally inconsistent or corrupted.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

}  // namespace kd
