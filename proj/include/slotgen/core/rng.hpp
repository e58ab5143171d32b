#pragma once

#include "slotgen/core/tensor.hpp"

#include <cmath>
#include <cstdint>

namespace slotgen {

// splitmix64. Self-contained so that streams are reproducible across
// platforms and standard-library versions.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // [0, 1)
  real uniform() { return static_cast<real>(next_u64() >> 11) * 0x1.0p-53; }

  real uniform(real lo, real hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller; consumes two draws per sample.
  real normal() {
    const real u1 = real(1) - uniform();  // (0, 1]
    const real u2 = uniform();
    return std::sqrt(real(-2) * std::log(u1)) *
           std::cos(real(2) * real(3.14159265358979323846) * u2);
  }

  // [0, n)
  int uniform_int(int n) {
    return static_cast<int>((static_cast<__uint128_t>(next_u64()) *
                             static_cast<__uint128_t>(n)) >> 64);
  }

  void fill_normal(Tensor& t) {
    for (auto& x : t.v) x = normal();
  }
  void fill_uniform(Tensor& t, real lo, real hi) {
    for (auto& x : t.v) x = uniform(lo, hi);
  }

  uint64_t state() const { return state_; }

 private:
  uint64_t state_;
};

// Stable stream derivation: hash the seed with a path of stream ids.
inline uint64_t mix_seed(uint64_t a, uint64_t b) {
  Rng r(a ^ (b * 0xD6E8FEB86659FD93ULL + 0x2545F4914F6CDD1DULL));
  return r.next_u64();
}

inline Rng derive_rng(uint64_t seed, uint64_t s0) { return Rng(mix_seed(seed, s0)); }
inline Rng derive_rng(uint64_t seed, uint64_t s0, uint64_t s1) {
  return Rng(mix_seed(mix_seed(seed, s0), s1));
}

}  // namespace slotgen
