#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cbx {

// Input that violates a declared schema or contract (bad context, outcome
// out of range, malformed file). Maps to exit code 2 / HTTP 422.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A validation failure attributable to one observation row.
class RowError : public ValidationError {
 public:
  RowError(std::size_t row, const std::string& what)
      : ValidationError("row " + std::to_string(row) + ": " + what), row_(row) {}

  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

}  // namespace cbx
