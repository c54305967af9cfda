#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace grace {

/// Shape or dimension disagreement between operands.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Non-finite values, divergence, or an argument outside a numeric domain.
class NumericError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Misuse of the differentiation tape (non-scalar root, detached root).
class TapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Bad configuration value or missing configuration key.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed input data. Carries the 1-based line number when known (0 otherwise).
class DataError : public std::runtime_error {
 public:
  enum class Kind {
    Io,
    FieldCount,
    UnknownTag,
    OrphanInside,
    PolarityMismatch,
    InconsistentPolarity,
    LengthMismatch,
    Overlength,
    UnknownToken,
    Format,
  };

  DataError(Kind kind, std::size_t line, const std::string& what)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
        kind_(kind),
        line_(line) {}

  Kind kind() const noexcept { return kind_; }
  std::size_t line() const noexcept { return line_; }

 private:
  Kind kind_;
  std::size_t line_;
};

}  // namespace grace
