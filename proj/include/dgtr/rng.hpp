#pragma once

// Portable random stream used for all seeded generation. The algorithm is
// fixed so other implementations can reproduce the same values:
//
//   seeding:   four successive SplitMix64 outputs starting from `seed`
//              (increment 0x9E3779B97F4A7C15, mix constants
//              0xBF58476D1CE4E5B9 and 0x94D049BB133111EB, shifts 30/27/31)
//   stream:    xoshiro256** (result = rotl(s1 * 5, 7) * 9)
//   uniform:   (next() >> 11) * 2^-53, in [0, 1)
//   normal:    Box-Muller, one value per two uniforms:
//              sqrt(-2 ln(1 - u1)) * cos(2 pi u2)
//
// See docs/formats.md.

#include <cmath>
#include <cstdint>
#include <numbers>

namespace dgtr {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Derives an independent seed for sub-stream `index` of `seed`.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t s = seed ^ (0xD1B54A32D192ED03ULL * (index + 1));
  return splitmix64(s);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t sm = seed;
    for (auto& w : s_) w = splitmix64(sm);
  }

  std::uint64_t next() {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(1.0 - u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  std::uint64_t s_[4];
};

}  // namespace dgtr
