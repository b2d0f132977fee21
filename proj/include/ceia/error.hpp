#pragma once

#include <stdexcept>
#include <string>

namespace ceia {

// Bad input, malformed file, violated precondition. CLI exit code 1.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// NaN/Inf during training or optimization. CLI exit code 2.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ceia

#define CEIA_REQUIRE(cond, msg)                          \
  do {                                                   \
    if (!(cond)) throw ::ceia::ValidationError((msg));   \
  } while (0)
