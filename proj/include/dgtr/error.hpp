#pragma once

#include <stdexcept>
#include <string>

namespace dgtr {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand extents do not fit together.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// NaN or otherwise unusable numeric input.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// A configuration value violates its documented range.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A caller broke a function precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

class CameraError : public Error {
 public:
  using Error::Error;
};

/// Procrustes alignment was asked to align a degenerate point set.
class AlignmentError : public Error {
 public:
  using Error::Error;
};

/// A binary file did not match its documented layout.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace dgtr
