#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace hasnets {

// Invalid configuration, shape mismatch, or violated precondition.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// NaN/Inf produced during a forward or backward pass.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed binary or text input. Carries the byte offset where parsing failed.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::uint64_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

// Ledger bookkeeping broke an invariant (e.g. a probe is missing an id).
class ConsistencyError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// The defense removed every training sample.
class DefenseCollapse : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace hasnets
