#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

namespace mapvec {

// Raised when an input violates an operation's preconditions. The CLI maps
// it to exit code 2.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw ValidationError(message);
}

inline void require_finite(double value, const std::string& what) {
  if (!std::isfinite(value)) throw ValidationError(what + " must be finite");
}

}  // namespace mapvec
