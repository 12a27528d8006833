#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace ssmlab {

// Seeded random stream with portable output. mt19937_64 is fully specified
// by the standard; the distribution transforms below are hand-rolled so that
// the same seed yields the same bytes on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(mix64(seed)) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller; consumes exactly two uniforms per call.
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1], keeps log finite
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  // Uniform integer in [lo, hi], inclusive.
  int uniform_int(int lo, int hi) {
    const int span = hi - lo + 1;
    int k = static_cast<int>(uniform() * static_cast<double>(span));
    if (k >= span) k = span - 1;
    return lo + k;
  }

  // Independent child stream; derived from the construction seed, so splits
  // do not depend on how much of this stream has been consumed.
  Rng split(std::uint64_t key) const {
    return Rng(mix64(seed_ + 0x9e3779b97f4a7c15ULL * (key + 1)));
  }

 private:
  static std::uint64_t mix64(std::uint64_t x) {
    // splitmix64 finalizer
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace ssmlab
