#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace bft {

// Deterministic 64-bit PRNG (splitmix64). Constants are part of the file
// format contract: any reimplementation must reproduce the same streams so
// that splits and initializations are bit-identical across platforms.
class SplitMix64 {
 public:
  explicit SplitMix64(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ULL;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform double in [0, 1), 53 bits of mantissa.
  double next_double() { return double(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in [-a, a).
  double next_uniform(double a) { return (2.0 * next_double() - 1.0) * a; }

  // Bounded integer in [0, n). Plain modulo; the tiny bias is irrelevant at
  // desk scale and keeps the stream reproducible from the spec of splitmix64
  // alone.
  uint64_t next_below(uint64_t n) { return next_u64() % n; }

  // Standard normal via Box-Muller. Consumes exactly two uniforms per pair;
  // the second draw of the pair is cached.
  double next_normal() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    double u1 = next_double();
    double u2 = next_double();
    // Guard against log(0).
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * 3.14159265358979323846 * u2;
    cached_ = r * std::sin(theta);
    have_cached_ = true;
    return r * std::cos(theta);
  }

 private:
  uint64_t state_;
  bool have_cached_ = false;
  double cached_ = 0.0;
};

// FNV-1a over a label, used to derive independent sub-streams from one run
// seed. Stable by construction (named streams, not positional), so adding a
// parameter to a model does not shift the init of the others.
inline uint64_t seed_stream(uint64_t seed, std::string_view label) {
  uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : label) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return seed ^ h;
}

inline uint64_t seed_stream(uint64_t seed, std::string_view label, uint64_t index) {
  SplitMix64 mix(seed_stream(seed, label) + 0x632BE59BD9B4E019ULL * index);
  return mix.next_u64();
}

}  // namespace bft
