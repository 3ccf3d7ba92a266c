#pragma once

#include <stdexcept>
#include <string>

namespace vdqn {

// Dimension mismatch, out-of-range index, bad configuration value.
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A computation produced inf/nan. `where()` names the primitive or term.
class NumericError : public std::runtime_error {
 public:
  NumericError(std::string where, const std::string& what)
      : std::runtime_error(what), where_(std::move(where)) {}
  const std::string& where() const noexcept { return where_; }

 private:
  std::string where_;
};

// Caller broke a stateful contract, e.g. stepping a finished episode.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Replay buffer holds fewer transitions than a requested batch.
class InsufficientData : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace vdqn
