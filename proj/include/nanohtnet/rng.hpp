#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace nht {

// Counter-based pseudo-random numbers: every draw is a pure function of
// (seed, stream, counter), so results do not depend on evaluation order,
// thread count, or platform. The mixer is the splitmix64 finalizer.
inline uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline uint64_t rng_u64(uint64_t seed, uint64_t stream, uint64_t counter) {
  return mix64(mix64(seed ^ mix64(stream)) ^ counter * 0xd6e8feb86659fd93ull);
}

// Uniform double in [0, 1) with 53 bits of mantissa.
inline double rng_unit(uint64_t seed, uint64_t stream, uint64_t counter) {
  return static_cast<double>(rng_u64(seed, stream, counter) >> 11) * 0x1.0p-53;
}

// Stable 64-bit hash for deriving per-name streams (FNV-1a).
inline uint64_t hash_name(std::string_view name) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ull;
  }
  return h;
}

// Sequential convenience wrapper over the counter-based generator.
struct RngStream {
  uint64_t seed = 0;
  uint64_t stream = 0;
  uint64_t counter = 0;

  RngStream(uint64_t seed_, uint64_t stream_) : seed(seed_), stream(stream_) {}
  RngStream(uint64_t seed_, std::string_view name) : seed(seed_), stream(hash_name(name)) {}

  uint64_t next_u64() { return rng_u64(seed, stream, counter++); }
  double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  double next_uniform(double lo, double hi) { return lo + (hi - lo) * next_unit(); }
  // Index in [0, n).
  uint64_t next_below(uint64_t n) { return next_u64() % n; }
  // Box-Muller without a cached spare, so every draw is order-independent
  // of the caller's history.
  double next_normal() {
    double u1 = next_unit();
    double u2 = next_unit();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }
};

// Seeded in-place Fisher-Yates shuffle.
template <class Vec>
void shuffle_inplace(Vec& v, RngStream& rng) {
  for (size_t i = v.size(); i > 1; --i) {
    size_t j = static_cast<size_t>(rng.next_below(i));
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace nht
