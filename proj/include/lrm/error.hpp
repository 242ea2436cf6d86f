#pragma once

#include <stdexcept>
#include <string>

namespace lrm {

/// Raised when a caller breaks an operation's precondition (shape mismatch,
/// out-of-range index, non-atomic mask, ...).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Raised for malformed external input (config files, label files,
/// checkpoints) and numerical failures during training.
class RuntimeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Parse failure with a 1-based line/column position.
class ParseError : public RuntimeError {
 public:
  ParseError(std::string what, int line, int column)
      : RuntimeError("line " + std::to_string(line) + ", column " + std::to_string(column) + ": " + what),
        line_(line),
        column_(column) {}

  int line() const { return line_; }
  int column() const { return column_; }

 private:
  int line_;
  int column_;
};

}  // namespace lrm
