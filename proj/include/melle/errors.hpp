#pragma once

#include <stdexcept>

namespace melle {

// Non-finite values or failed numeric validation; maps to exit code 3 at the
// CLI, distinct from usage (1) and data (2) failures.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace melle
