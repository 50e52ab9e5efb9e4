#include "gatescope/rng.hpp"

#include <cmath>
#include <numbers>

namespace gatescope {

double CounterRng::normal(std::uint64_t counter) const {
  // 1 - u keeps the log argument in (0, 1].
  const double u1 = 1.0 - uniform(2 * counter);
  const double u2 = uniform(2 * counter + 1);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace gatescope
