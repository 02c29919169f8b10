#pragma once

// Deterministic random number utilities.
//
// Everything that draws randomness in this library is seeded through
// derive_seed(), so a scenario seed fans out into decorrelated streams for
// truth generation, projection choices and photon noise.  Photon noise is
// additionally *counter based*: the k-th noise value of a backend depends only
// on (backend seed, k), never on how many values were drawn before it in other
// code paths.  That makes sub-sampled re-analysis of a sweep reproduce the
// exact noise of the full sweep.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace csesr {

// splitmix64 finalizer (Vigna).  Bijective scramble of a 64-bit word.
constexpr std::uint64_t scramble64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// One splitmix64 step: advance the state by the golden-ratio increment and
// return the scrambled value.
constexpr std::uint64_t splitmix64_next(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ull;
  return scramble64(state);
}

// Combine two words into a well-mixed one.  Not cryptographic; just needs to
// decorrelate nearby (seed, index) pairs.
constexpr std::uint64_t mix64(std::uint64_t a, std::uint64_t b) {
  return scramble64(scramble64(a + 0x9e3779b97f4a7c15ull) ^ (b + 0xd1b54a32d192ed03ull));
}

// Fold an arbitrary list of stream labels / indices into a child seed.
// derive_seed(s, a, b) != derive_seed(s, b, a) in general, which is what we
// want: position in the label list is meaningful.
template <class... Parts>
constexpr std::uint64_t derive_seed(std::uint64_t base, Parts... parts) {
  std::uint64_t s = base;
  ((s = mix64(s, static_cast<std::uint64_t>(parts))), ...);
  return s;
}

// Small, fast, seedable generator built on splitmix64.  Each next_gaussian()
// consumes exactly two raw draws (no cached spare), so the draw count of any
// call sequence is easy to reason about.
class SmallRng {
 public:
  explicit SmallRng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() { return splitmix64_next(state_); }

  // Uniform in [0, 1) with 53 random bits.
  double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n).  Rejection keeps it exactly unbiased.
  std::uint64_t next_below(std::uint64_t n) {
    const std::uint64_t limit = n * ((~std::uint64_t{0}) / n);
    std::uint64_t v = next_u64();
    while (v >= limit) v = next_u64();
    return v % n;
  }

  // Standard normal via Box-Muller.
  double next_gaussian() {
    const double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
    const double u2 = next_unit();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  // Uniform direction on the unit sphere (normalized Gaussian triple).
  std::array<double, 3> next_unit_vector() {
    for (;;) {
      const double x = next_gaussian();
      const double y = next_gaussian();
      const double z = next_gaussian();
      const double r = std::sqrt(x * x + y * y + z * z);
      if (r > 1e-12) return {x / r, y / r, z / r};
    }
  }

 private:
  std::uint64_t state_;
};

// Counter-based standard normal: value depends only on (seed, counter).
inline double counter_gaussian(std::uint64_t seed, std::uint64_t counter) {
  SmallRng rng(mix64(seed, counter));
  return rng.next_gaussian();
}

}  // namespace csesr
