#pragma once

#include <cmath>
#include <cstdint>

namespace pv {

// Counter-based deterministic random draws. Every consumer keys its stream by
// (seed, purpose, indices), so values are reproducible regardless of call
// order and independent of the standard library's distribution internals.
// Mixing is splitmix64.

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_key(std::uint64_t a, std::uint64_t b) {
  return splitmix64(a ^ (0x9e3779b97f4a7c15ULL + (b << 6) + (b >> 2)) ^ b);
}

inline std::uint64_t key4(std::uint64_t seed, std::uint64_t a, std::uint64_t b,
                          std::uint64_t c) {
  return mix_key(mix_key(mix_key(seed, a), b), c);
}

// Uniform in (0, 1), never exactly 0 or 1.
inline double key_uniform(std::uint64_t key) {
  return (static_cast<double>(splitmix64(key) >> 11) + 0.5) * 0x1p-53;
}

// Standard normal via Box-Muller on two derived uniforms.
inline double key_normal(std::uint64_t key) {
  double u1 = key_uniform(mix_key(key, 0x6e6f726d31ULL));
  double u2 = key_uniform(mix_key(key, 0x6e6f726d32ULL));
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

// Sequential convenience stream for places that just need "some" reproducible
// draws (initialization, shuffles, synthetic textures).
class RngStream {
public:
  explicit RngStream(std::uint64_t key) : state_(splitmix64(key)) {}

  std::uint64_t next_u64() {
    state_ = splitmix64(state_ + 0x9e3779b97f4a7c15ULL);
    return state_;
  }
  double uniform() { return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }
  // integer in [0, n)
  std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

  template <class It>
  void shuffle(It first, It last) {
    auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) std::swap(first[i - 1], first[below(i)]);
  }

private:
  std::uint64_t state_;
};

}  // namespace pv
