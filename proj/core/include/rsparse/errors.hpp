#pragma once

#include <stdexcept>
#include <string>

namespace rsparse {

// Contract violations: bad shapes, out-of-range arguments, malformed inputs.
// The CLI maps these to exit code 2.
struct usage_error : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Numerical failures (e.g. SVD non-convergence). CLI exit code 1.
struct numeric_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// File/stream failures. CLI exit code 2.
struct io_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace rsparse
