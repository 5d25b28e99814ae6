#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace snigl {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An argument is outside the domain an operation accepts.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// A quantity the computation must divide by (or invert) is degenerate.
class DegenerateError : public Error {
 public:
  using Error::Error;
};

/// Enumeration would exceed the configured state-space cap.
class IntractableError : public Error {
 public:
  using Error::Error;
};

/// A text or binary record could not be parsed.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line = 0)
      : Error(line == 0 ? what : "line " + std::to_string(line) + ": " + what),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// A record carries a format version this reader does not understand.
class VersionError : public ParseError {
 public:
  using ParseError::ParseError;
};

/// A required input (file, checkpoint, environment) is missing.
class MissingInputError : public Error {
 public:
  using Error::Error;
};

/// Writing an output artifact failed.
class WriteError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

}  // namespace snigl
