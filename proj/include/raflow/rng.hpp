#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>

namespace raflow {

/// Counter-based generator: the i-th draw of stream (seed, stream) is
///   mix(key + γ·i), key = mix(seed + γ·(stream + 1)), γ = 0x9E3779B97F4A7C15,
/// with mix the SplitMix64 finalizer. Every variate below is defined in terms
/// of next() alone, so streams are reproducible in any language.
class CounterRng {
 public:
  static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

  CounterRng(std::uint64_t seed, std::uint64_t stream = 0) : key_(mix(seed + kGamma * (stream + 1))) {}

  static constexpr std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::uint64_t next() { return mix(key_ + kGamma * ++counter_); }

  /// [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// [0, n) by modulo reduction.
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(next() % n); }

  /// Box–Muller, cosine branch only: one normal per two uniforms.
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double sigma) { return mean + sigma * normal(); }

  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace raflow
