#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace macrl {

// splitmix64 finalizer, used to mix seeds into stream parameters.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// PCG32 (XSH RR). The whole generator state is {state, inc}, so serializing
// two u64 values and restoring them resumes the exact sequence.
class Rng {
public:
  Rng() : Rng(0x853c49e6748fea9bull) {}

  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0x2545f4914f6cdd1dull) {
    state_ = 0;
    inc_ = (stream << 1) | 1u;
    next_u32();
    state_ += seed;
    next_u32();
  }

  std::uint32_t next_u32() {
    std::uint64_t old = state_;
    state_ = old * 6364136223846793005ull + inc_;
    std::uint32_t xorshifted = static_cast<std::uint32_t>(((old >> 18) ^ old) >> 27);
    std::uint32_t rot = static_cast<std::uint32_t>(old >> 59);
    return (xorshifted >> rot) | (xorshifted << ((32u - rot) & 31u));
  }

  std::uint64_t next_u64() {
    std::uint64_t hi = next_u32();
    return (hi << 32) | next_u32();
  }

  // Bounded draw via multiply-shift. n must be > 0.
  std::uint32_t uniform_int(std::uint32_t n) {
    return static_cast<std::uint32_t>((static_cast<std::uint64_t>(next_u32()) * n) >> 32);
  }

  // Uniform in [0, 1) with 32 bits of resolution.
  double uniform() { return next_u32() * 0x1p-32; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller without a cached spare: every normal consumes exactly two
  // uniforms, which keeps {state, inc} the complete serializable state.
  double normal() {
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  // Normal(0, stddev) truncated to +-2 stddev by resampling.
  double trunc_normal(double stddev) {
    for (;;) {
      double v = normal();
      if (v >= -2.0 && v <= 2.0) return v * stddev;
    }
  }

  std::uint64_t state() const { return state_; }
  std::uint64_t inc() const { return inc_; }

  void restore(std::uint64_t state, std::uint64_t inc) {
    state_ = state;
    inc_ = inc;
  }

private:
  std::uint64_t state_;
  std::uint64_t inc_;
};

// Derives an independent child stream from a seed plus up to four tags.
// Draws for a given (seed, a, b, c, d) never depend on how work is batched,
// which is what lets gradient accumulation reproduce single-batch randomness.
inline Rng derive_rng(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                      std::uint64_t c = 0, std::uint64_t d = 0) {
  std::uint64_t h = mix64(seed);
  h = mix64(h ^ a);
  h = mix64(h ^ b);
  h = mix64(h ^ c);
  h = mix64(h ^ d);
  return Rng(h, mix64(h ^ 0x6f4a7c15ull));
}

// Tags for derived streams.
namespace rng_tag {
inline constexpr std::uint64_t init = 1;
inline constexpr std::uint64_t bank = 2;
inline constexpr std::uint64_t order = 3;
inline constexpr std::uint64_t augment = 4;
inline constexpr std::uint64_t mask = 5;
inline constexpr std::uint64_t data = 6;
}  // namespace rng_tag

}  // namespace macrl
