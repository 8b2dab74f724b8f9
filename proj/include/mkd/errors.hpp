#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mkd {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible for the requested operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A value lies outside the domain of a function (log of non-positive, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Caller broke a precondition of an API (non-scalar loss, missing gradient, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

class UnreachableParameterError : public Error {
 public:
  using Error::Error;
};

/// A function being differentiated numerically produced a non-finite value.
class EvaluationError : public Error {
 public:
  using Error::Error;
};

/// Training diverged: a loss or gradient became NaN/Inf.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class InvariantViolation : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file (bad magic, ragged rows, ...).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// File ended before the payload announced by its header.
class LengthError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// A text cell could not be parsed; carries its 1-based position.
class ParseError : public FormatError {
 public:
  ParseError(const std::string& what, std::size_t row, std::size_t column)
      : FormatError(what + " (row " + std::to_string(row) + ", column " + std::to_string(column) + ")"),
        row_(row),
        column_(column) {}
  std::size_t row() const { return row_; }
  std::size_t column() const { return column_; }

 private:
  std::size_t row_;
  std::size_t column_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace mkd
