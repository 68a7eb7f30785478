#pragma once

// Counter-based random streams. A stream is keyed by (seed, trial, role) and the
// k-th draw is a pure function of the key and k, so results do not depend on the
// order in which trials are executed.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace knockoff {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

enum class StreamRole : std::uint64_t {
  Design = 1,
  Signal = 2,
  Noise = 3,
  Split = 4,
  Support = 5,
  Sign = 6,
};

class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t trial, std::uint64_t role) {
    key_ = splitmix64(splitmix64(splitmix64(seed) ^ trial) ^ (role * 0xD1B54A32D192ED03ULL));
  }
  CounterRng(std::uint64_t seed, std::uint64_t trial, StreamRole role)
      : CounterRng(seed, trial, static_cast<std::uint64_t>(role)) {}

  std::uint64_t next() { return splitmix64(key_ ^ splitmix64(counter_++)); }

  /// Uniform on (0, 1).
  double uniform() { return (static_cast<double>(next() >> 11) + 0.5) * 0x1.0p-53; }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform(), u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double t = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(t);
    has_spare_ = true;
    return r * std::cos(t);
  }

  /// Uniform integer in [0, n), rejection sampled.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = next();
    } while (x >= limit);
    return x % n;
  }

  /// Random permutation of 0..n-1 (Fisher-Yates).
  template <class Int>
  std::vector<Int> permutation(Int n) {
    std::vector<Int> v(static_cast<std::size_t>(n));
    for (Int i = 0; i < n; ++i) v[static_cast<std::size_t>(i)] = i;
    for (Int i = n - 1; i > 0; --i) {
      const auto j = static_cast<Int>(below(static_cast<std::uint64_t>(i) + 1));
      std::swap(v[static_cast<std::size_t>(i)], v[static_cast<std::size_t>(j)]);
    }
    return v;
  }

 private:
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace knockoff
