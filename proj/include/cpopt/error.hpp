#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cpopt {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Vector or matrix dimensions disagree with what an object expects.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A value violates a documented precondition or invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Malformed input file. `row` is the 1-based data row (0 for the header).
class ParseError : public Error {
 public:
  ParseError(std::size_t row, std::string field, const std::string& what)
      : Error("row " + std::to_string(row) + ", field '" + field + "': " + what),
        row_(row),
        field_(std::move(field)) {}

  std::size_t row() const { return row_; }
  const std::string& field() const { return field_; }

 private:
  std::size_t row_;
  std::string field_;
};

// Optimization or training produced a non-finite quantity.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace cpopt
