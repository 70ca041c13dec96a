#pragma once

#include <stdexcept>
#include <string>

namespace fdl {

// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller supplied something that violates a documented precondition.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// A computed quantity broke an internal invariant (e.g. a spectrum that
// should be Hermitian is not). Indicates a bug upstream, not bad input.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

class RankDeficientError : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class MissingFileError : public IoError {
 public:
  using IoError::IoError;
};

class DimensionMismatchError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

class UnknownApertureError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

}  // namespace fdl
