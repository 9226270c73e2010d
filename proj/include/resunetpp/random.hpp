#pragma once

// Seeded random source with distribution mappings written out by hand, so a
// given seed produces the same stream regardless of the standard library's
// distribution implementations.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>

namespace resunetpp {

// SplitMix64 finalizer; used to derive independent child seeds.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b = 0) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ull * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t bits() { return engine_(); }
  // [0, 1)
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // [0, n)
  std::int64_t index(std::int64_t n) {
    return std::min<std::int64_t>(static_cast<std::int64_t>(uniform() * static_cast<double>(n)), n - 1);
  }
  std::int64_t integer(std::int64_t lo, std::int64_t hi) { return lo + index(hi - lo + 1); }
  bool bernoulli(double p) { return uniform() < p; }
  // Box-Muller
  double normal() {
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  template <typename It>
  void shuffle(It first, It last) {
    for (auto n = last - first; n > 1; --n) std::swap(first[n - 1], first[index(n)]);
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace resunetpp
