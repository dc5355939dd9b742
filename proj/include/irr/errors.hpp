#pragma once

#include <stdexcept>
#include <string>

namespace irr {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes disagree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A documented precondition of an operation does not hold.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file; the message carries the row and column.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t row, std::size_t column)
      : Error(what + " (row " + std::to_string(row) + ", column " + std::to_string(column) + ")"),
        row_(row),
        column_(column) {}

  std::size_t row() const noexcept { return row_; }
  std::size_t column() const noexcept { return column_; }

 private:
  std::size_t row_;
  std::size_t column_;
};

/// A Cholesky factorization met a matrix that is not positive definite.
class FactorizationError : public Error {
 public:
  using Error::Error;
};

/// An iterative method hit its iteration cap.
class ConvergenceError : public Error {
 public:
  using Error::Error;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw PreconditionError(message);
}

inline void require_dims(bool condition, const std::string& message) {
  if (!condition) throw DimensionError(message);
}

}  // namespace irr
