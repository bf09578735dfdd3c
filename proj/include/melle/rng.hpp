#pragma once

// Counter-based random stream. A draw at position i depends only on
// (seed, i), so streams can be forked per (step, item, site) and every
// consumer sees a reproducible sequence regardless of evaluation order.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace melle {

// FNV-1a: stable 64-bit string hash for rng stream tags and request ids.
inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

class RngState {
 public:
  RngState() = default;
  explicit RngState(std::uint64_t seed, std::uint64_t counter = 0)
      : seed_(seed), counter_(counter) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  // Independent child stream; tag picks the branch.
  RngState fork(std::uint64_t tag) const {
    return RngState(mix(seed_ ^ mix(tag + 0x9E3779B97F4A7C15ull)), 0);
  }

  std::uint64_t next_u64() { return mix(seed_ + 0x9E3779B97F4A7C15ull * ++counter_); }

  // Uniform in (0, 1]; never returns 0 so log() stays finite.
  double next_uniform() {
    return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
  }

  double next_gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = next_uniform();
    const double u2 = next_uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  // SplitMix64 finalizer.
  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t seed_ = 0;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace melle
