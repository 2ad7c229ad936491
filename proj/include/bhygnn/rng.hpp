#pragma once

// Deterministic random number generation for the whole library.
//
// Generator: SplitMix64 (counter-based). State advances by the golden-gamma
// constant and the output is the SplitMix64 finalizer of the new state:
//
//   state  += 0x9E3779B97F4A7C15
//   z       = state
//   z      ^= z >> 30;  z *= 0xBF58476D1CE4E5B9
//   z      ^= z >> 27;  z *= 0x94D049BB133111EB
//   z      ^= z >> 31
//   output  = z
//
// Derived quantities (all consume whole 64-bit outputs, in order):
//   uniform:   u = ((x >> 11) + 0.5) * 2^-53            -> (0,1) strictly
//   normal:    two uniforms u1,u2; z = sqrt(-2 ln u1) * cos(2*pi*u2)
//   gumbel:    one uniform u;      g = -ln(-ln(u))
//   below(n):  x % n
//
// Sub-streams: child(key) seeds a fresh stream with
//   mix64(seed ^ mix64(key + 0x9E3779B97F4A7C15))
// where `seed` is the stream's construction seed (not its cursor), so the
// derivation is independent of how many draws were taken.

#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

namespace bhygnn {

inline std::uint64_t mix64(std::uint64_t z) {
  z ^= z >> 30;
  z *= 0xBF58476D1CE4E5B9ULL;
  z ^= z >> 27;
  z *= 0x94D049BB133111EBULL;
  z ^= z >> 31;
  return z;
}

class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : seed_(seed), state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ULL;
    return mix64(state_);
  }

  // Uniform in the open interval (0,1); never returns 0 or 1 exactly.
  double uniform() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; consumes exactly two 64-bit outputs.
  double normal() {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  // Standard Gumbel; consumes one 64-bit output.
  double gumbel() { return -std::log(-std::log(uniform())); }

  // Uniform integer in [0, n). Plain modulo, documented as part of the stream
  // contract; the bias is immaterial for n << 2^64.
  std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

  // Independent sub-stream keyed on `key`; see header comment.
  RngStream child(std::uint64_t key) const {
    return RngStream(mix64(seed_ ^ mix64(key + 0x9E3779B97F4A7C15ULL)));
  }

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::uint64_t state_;
};

// First k entries of a partial Fisher-Yates shuffle of 0..n-1.
// Swap target at step i is i + below(n - i).
inline std::vector<std::int64_t> sample_without_replacement(std::int64_t n, std::int64_t k,
                                                            RngStream& rng) {
  std::vector<std::int64_t> ids(static_cast<std::size_t>(n));
  std::iota(ids.begin(), ids.end(), std::int64_t{0});
  if (k > n) k = n;
  for (std::int64_t i = 0; i < k; ++i) {
    const std::int64_t j = i + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(n - i)));
    std::swap(ids[static_cast<std::size_t>(i)], ids[static_cast<std::size_t>(j)]);
  }
  ids.resize(static_cast<std::size_t>(k));
  return ids;
}

// round(p * count), half away from zero.
inline std::int64_t rounded_fraction(double p, std::int64_t count) {
  return static_cast<std::int64_t>(std::llround(p * static_cast<double>(count)));
}

}  // namespace bhygnn
