#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

#include "simrsa/error.hpp"

namespace simrsa {

// Deterministic RNG built on splitmix64. Everything here is specified down to
// the bit so that seeded runs reproduce exactly on any platform; the standard
// library distributions are implementation-defined and are deliberately not
// used.

inline std::uint64_t splitmix64_next(std::uint64_t& state) {
  state += 0x9E3779B97F4A7C15ull;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

/// Stable 64-bit hash of (seed, key): FNV-1a over the key bytes folded into
/// the seed, finalized through the splitmix64 mixer.
inline std::uint64_t derive_seed(std::uint64_t base_seed, std::string_view key) {
  std::uint64_t h = 1469598103934665603ull ^ base_seed;
  for (unsigned char c : key) {
    h ^= c;
    h *= 1099511628211ull;
  }
  std::uint64_t s = h;
  return splitmix64_next(s);
}

inline std::uint64_t derive_seed(std::uint64_t base_seed, std::string_view key, std::uint64_t salt) {
  std::uint64_t s = derive_seed(base_seed, key) ^ (salt * 0x9E3779B97F4A7C15ull);
  return splitmix64_next(s);
}

/// 16-hex-digit stable content digest (FNV-1a/splitmix finalized).
inline std::string stable_digest_hex(std::string_view text) {
  const std::uint64_t h = derive_seed(0, text);
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 0; i < 16; ++i) out[15 - i] = digits[(h >> (4 * i)) & 0xf];
  return out;
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() { return splitmix64_next(state_); }

  /// Uniform in [0, 1) with 53 bits of precision.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Unbiased draw in [0, n) by rejection.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw Error("Rng::below: n must be positive");
    std::uint64_t x, r;
    do {
      x = next_u64();
      r = x % n;
    } while (x - r > 0ull - n);
    return r;
  }

  /// Box-Muller normal; the second deviate is cached so draws stay paired.
  double normal(double mean = 0.0, double sd = 1.0) {
    if (have_spare_) {
      have_spare_ = false;
      return mean + sd * spare_;
    }
    double u1, u2;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.141592653589793238462643383279502884 * u2;
    spare_ = radius * std::sin(theta);
    have_spare_ = true;
    return mean + sd * radius * std::cos(theta);
  }

  /// Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      using std::swap;
      swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace simrsa
