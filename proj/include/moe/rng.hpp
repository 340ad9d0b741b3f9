#pragma once

#include <cstdint>
#include <random>

namespace moe {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Independent child seed for stream `stream` of a base seed. Used to give
// episodes, pixels and noise channels their own deterministic streams so
// parallel and sequential execution produce identical bytes.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  return splitmix64(base ^ splitmix64(stream + 0x51ED2701A9B0E9D5ULL));
}

// mt19937_64 engine with explicit bit-to-double conversions. The engine is
// fully specified by the standard; the conversions below avoid the
// implementation-defined std::*_distribution algorithms so that equal seeds
// give equal sequences on any toolchain.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // [0, 1)
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n)
  std::uint64_t uniform_index(std::uint64_t n) {
    if (n == 0) return 0;
    // rejection sampling keeps the draw exactly uniform
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v = next_u64();
    while (v >= limit) v = next_u64();
    return v % n;
  }

  // Box-Muller, no cached spare: two draws per call, fixed call order.
  double normal(double sigma = 1.0) {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return sigma * r * std::cos(6.283185307179586476925286766559 * u2);
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace moe
