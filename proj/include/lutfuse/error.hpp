#pragma once

#include <stdexcept>
#include <string>

namespace lutfuse {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A documented precondition was violated by the caller.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// An operation was invoked in an unusable object state.
class InvalidState : public Error {
 public:
  using Error::Error;
};

// Filesystem-level failure (open, read, write).
class IoError : public Error {
 public:
  using Error::Error;
};

// File contents are malformed, truncated, or unsupported.
class DecodeError : public IoError {
 public:
  using IoError::IoError;
};

// A non-finite value appeared where the numeric contract forbids it
// (e.g. gradients fed to the optimizer).
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace lutfuse
