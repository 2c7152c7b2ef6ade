#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace pahnet {

/// Operand extents do not agree with an operation's contract.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A caller-side precondition was violated (non-scalar loss, mixed tapes, ...).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// A configuration value is out of its documented domain.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A computation produced NaN or infinity where finite values are required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Filesystem failure (missing file, unwritable path).
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed binary file. The kind distinguishes the failure classes the
/// PAHE / PAHM / PAHP readers can report.
class ParseError : public std::runtime_error {
 public:
  enum class Kind : std::uint8_t {
    BadMagic,
    UnknownVersion,
    Truncated,
    OutOfRange,
    ShapeMismatch,
    ConfigMismatch,
    Malformed,
  };

  ParseError(Kind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

}  // namespace pahnet
