#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace onoff {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A parameter lies outside its mathematical domain (negative mean, η > 1, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Vectors or truncations that should agree in size do not.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A requested photon number does not fit in the truncated Fock space.
class TruncationError : public Error {
 public:
  using Error::Error;
};

/// The EM update hit p_ν = 0 for a row with observed no-click events.
class DegeneracyError : public Error {
 public:
  using Error::Error;
};

/// A quantity is undefined for the given input (division by a zero probability,
/// every uncertainty term excluded, ...).
class UndefinedError : public Error {
 public:
  using Error::Error;
};

/// The χ² fit cannot be formed (zero uncertainties, too few degrees of freedom).
class IllPosedFitError : public Error {
 public:
  using Error::Error;
};

/// A file could not be opened, read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file. `line()` is 1-based, 0 when the error is not tied to a line.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace onoff
