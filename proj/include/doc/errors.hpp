#pragma once

#include <stdexcept>
#include <string>

namespace doc {

// Root of every error raised by the library. The CLI maps the subclasses
// onto distinct exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes, broken layer chains, checkpoint/spec mismatch.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Arguments or configuration values outside their domain.
class ValueError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced anywhere, or a numerical check over tolerance.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Unreadable or unwritable files.
class IoError : public Error {
 public:
  using Error::Error;
};

// Corrupt, truncated or wrongly versioned files.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace doc
