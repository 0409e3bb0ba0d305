#pragma once

#include <cstdint>
#include <random>

namespace microcarla {

/// Seeded random stream. Distributions are computed from raw engine output
/// so sequences do not depend on the standard library's distribution code.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  /// Uniform in [0, 1) with 53 bits of precision.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  bool bernoulli(double p) { return uniform() < p; }
  /// Uniform integer in [0, n).
  std::uint64_t index(std::uint64_t n) {
    // Rejection sampling for an unbiased draw.
    const std::uint64_t limit = (~std::uint64_t{0}) - (~std::uint64_t{0}) % n;
    std::uint64_t v;
    do v = engine_(); while (v >= limit);
    return v % n;
  }
  int sign() { return (engine_() >> 63) ? 1 : -1; }
  /// Standard normal via Box-Muller.
  double normal() {
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  bool operator==(const Rng&) const = default;

 private:
  std::mt19937_64 engine_;
};

/// SplitMix64 finaliser, used to derive independent seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace microcarla
