#pragma once

#include <stdexcept>
#include <string>

namespace gatescope {

// Domain failure: malformed input, violated invariant, unreachable backend.
// The CLI maps these to exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace gatescope
