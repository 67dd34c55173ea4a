#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace refforge {

// Deterministic random stream. mt19937_64 is fully specified by the
// standard; the standard *distributions* are not, so every draw here is
// built from raw 64-bit outputs to keep artifacts byte-identical across
// compilers.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1) with 53 bits of precision.
  double next_unit() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [0, n). Rejection sampling, unbiased.
  uint64_t next_below(uint64_t n) {
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x = gen_();
    while (x >= limit) x = gen_();
    return x % n;
  }

  int next_index(int n) { return static_cast<int>(next_below(static_cast<uint64_t>(n))); }

  // Standard normal via Box-Muller; one value per call, pair cached.
  double next_normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = next_unit();
    while (u1 <= 0.0) u1 = next_unit();
    const double u2 = next_unit();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  // Independent child stream; safe to hand to a parallel worker.
  Rng fork(uint64_t salt) { return Rng(mix_seed(gen_(), salt)); }

  // SplitMix64 finalizer; stateless seed derivation.
  static uint64_t mix_seed(uint64_t a, uint64_t b) {
    uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

inline uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace refforge
