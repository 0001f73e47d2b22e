#pragma once

#include <cmath>
#include <cstdint>

namespace srg {

// Counter-based splitmix64 stream. Identical (seed, counter) gives identical
// draws on every platform; substreams are derived with fork() so parallel and
// serial generation see the same sequences.
struct Rng {
  static constexpr const char* kAlgorithm = "splitmix64";

  uint64_t seed = 0;
  uint64_t counter = 0;

  Rng() = default;
  explicit Rng(uint64_t s) : seed(s) {}

  static uint64_t mix(uint64_t a, uint64_t b) {
    uint64_t z = a + 0x9E3779B97F4A7C15ULL * (b + 0x632BE59BD9B4E019ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  Rng fork(uint64_t stream) const { return Rng(mix(seed, stream)); }

  uint64_t next_u64() {
    uint64_t z = seed + (++counter) * 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // [0, 1)
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n)
  int uniform_int(int n) { return int(next_u64() % uint64_t(n)); }

  // Box-Muller, no caching: every call consumes exactly two uniforms.
  double normal() {
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }
};

}  // namespace srg
