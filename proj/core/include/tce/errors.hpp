#pragma once

#include <stdexcept>
#include <string>

namespace tce {

// Caller broke an API precondition (bad shapes, invalid config, corrupt file).
// The CLI maps this to exit code 1.
class ContractViolation : public std::runtime_error {
 public:
  explicit ContractViolation(const std::string& what) : std::runtime_error(what) {}
};

// A computation produced a non-finite or otherwise unusable value.
// The CLI maps this to exit code 2.
class NumericFailure : public std::runtime_error {
 public:
  explicit NumericFailure(const std::string& what) : std::runtime_error(what) {}
};

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw ContractViolation(msg);
}

inline void check_numeric(bool cond, const std::string& msg) {
  if (!cond) throw NumericFailure(msg);
}

}  // namespace tce
