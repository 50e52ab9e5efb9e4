#pragma once

#include <cstdint>

namespace gatescope {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Counter-based generator: the value at (seed, stream, counter) is a pure
// function of the key, so draws do not depend on call order or thread count.
class CounterRng {
 public:
  constexpr CounterRng(std::uint64_t seed, std::uint64_t stream = 0)
      : key_(splitmix64(splitmix64(seed) ^ (stream * 0xD1B54A32D192ED03ULL))) {}

  constexpr std::uint64_t bits(std::uint64_t counter) const {
    return splitmix64(key_ ^ splitmix64(counter * 0xA0761D6478BD642FULL + 0xE7037ED1A0B428DBULL));
  }

  // Uniform in [0, 1) with 53 bits.
  constexpr double uniform(std::uint64_t counter) const {
    return static_cast<double>(bits(counter) >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [0, n). n must be > 0. Multiply-shift; the bias is
  // below 2^-32 for the sizes used here.
  std::uint64_t below(std::uint64_t counter, std::uint64_t n) const {
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(bits(counter)) * n) >> 64);
  }

  // Standard normal via Box-Muller on two counter draws.
  double normal(std::uint64_t counter) const;

 private:
  std::uint64_t key_;
};

}  // namespace gatescope
