#pragma once

#include <stdexcept>
#include <string>

namespace cbct {

// Base for every error raised by the toolkit. The CLI maps the category
// onto its exit codes.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Caller supplied parameters that violate a type invariant.
class InvalidSpec : public Error {
public:
  using Error::Error;
};

// The voxel grid is not fully inside the X-ray cone for some view.
class CoverageError : public Error {
public:
  using Error::Error;
};

// Array/volume/projection shapes do not agree.
class DimensionMismatch : public Error {
public:
  using Error::Error;
};

// NaN or Inf where finite values are required.
class NumericError : public Error {
public:
  using Error::Error;
};

// Malformed file content (magic, version, header fields).
class FormatError : public Error {
public:
  using Error::Error;
};

// File shorter than its header promises.
class TruncationError : public FormatError {
public:
  TruncationError(std::size_t expected, std::size_t actual)
      : FormatError("truncated payload: expected " + std::to_string(expected) +
                    " bytes, got " + std::to_string(actual)),
        expected_bytes(expected), actual_bytes(actual) {}
  std::size_t expected_bytes;
  std::size_t actual_bytes;
};

class IoError : public Error {
public:
  using Error::Error;
};

} // namespace cbct
