#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace varda {

// Caller broke an operation's precondition (shape, axis, size mismatch...).
class ContractViolation : public std::logic_error {
 public:
  explicit ContractViolation(const std::string& what) : std::logic_error(what) {}
};

// Argument outside the mathematical domain of an op (log of 0, division by 0).
class DomainError : public std::domain_error {
 public:
  explicit DomainError(const std::string& what) : std::domain_error(what) {}
};

// Malformed serialized data. offset is the byte where parsing stopped.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : std::runtime_error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

// Bad key=value configuration text; line is 1-based (0 when not tied to a line).
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& what, int line)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  int line() const noexcept { return line_; }

 private:
  int line_;
};

// Training hit a non-finite loss.
class NumericalAbort : public std::runtime_error {
 public:
  explicit NumericalAbort(const std::string& what) : std::runtime_error(what) {}
};

#define VARDA_REQUIRE(cond, msg)                                 \
  do {                                                           \
    if (!(cond)) throw ::varda::ContractViolation(msg);          \
  } while (0)

}  // namespace varda
