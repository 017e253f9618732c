#pragma once

#include <cmath>
#include <cstdint>

namespace afa {

/// splitmix64: state advances by the golden-gamma constant, output is the
/// finalized state. Fully specified so datasets and weight init reproduce
/// byte-for-byte across platforms.
struct SplitMix64 {
  std::uint64_t state = 0;

  explicit SplitMix64(std::uint64_t seed) : state(seed) {}

  std::uint64_t next() {
    state += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1) from the high 53 bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi] inclusive.
  int uniform_int(int lo, int hi) {
    return lo + static_cast<int>(next() % static_cast<std::uint64_t>(hi - lo + 1));
  }

  /// Standard normal via Box-Muller (pair cached).
  double gaussian() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    double u1 = 1.0 - uniform();  // (0, 1], keeps log finite
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * 3.14159265358979323846 * u2;
    cached_ = r * std::sin(a);
    have_cached_ = true;
    return r * std::cos(a);
  }

 private:
  double cached_ = 0.0;
  bool have_cached_ = false;
};

/// Derives an independent stream from a base seed and a stream tag.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag) {
  SplitMix64 mix(base ^ (0x9E3779B97F4A7C15ULL * (tag + 1)));
  return mix.next();
}

/// FNV-1a over a byte string, used for name-salted parameter streams.
inline std::uint64_t fnv1a64(const char* bytes, std::size_t len,
                             std::uint64_t basis = 0xCBF29CE484222325ULL) {
  std::uint64_t h = basis;
  for (std::size_t i = 0; i < len; ++i) {
    h ^= static_cast<unsigned char>(bytes[i]);
    h *= 0x100000001B3ULL;
  }
  return h;
}

}  // namespace afa
