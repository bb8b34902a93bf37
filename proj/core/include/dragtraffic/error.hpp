#pragma once

#include <stdexcept>
#include <string>

namespace dragtraffic {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes do not line up for the requested operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A value violates a documented invariant (bad pose, bad ratio, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// A referenced entity (agent, session, expert, file) does not exist.
class NotFoundError : public Error {
 public:
  using Error::Error;
};

/// A request was made against a stale session revision.
class ConflictError : public Error {
 public:
  using Error::Error;
};

/// A numerical failure such as a NaN gradient.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file. Carries the 1-based line number when known.
class SchemaError : public Error {
 public:
  SchemaError(const std::string& what, std::size_t line = 0)
      : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

}  // namespace dragtraffic
