#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <random>

namespace dmarx {

/// Seeded random stream. A given seed reproduces the exact same draw
/// sequence; Gaussian variates use an explicit Box-Muller transform so the
/// sequence does not depend on the standard library's distribution
/// internals. Streams are single-owner: parallel work derives one
/// independent stream per trial via derive().
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }

  /// Independent child stream keyed by (a, b), e.g. (trial, substream).
  RngStream derive(std::uint64_t a, std::uint64_t b = 0) const {
    std::uint64_t s = mix(seed_ + 0x9e3779b97f4a7c15ull);
    s = mix(s ^ mix(a + 0xbf58476d1ce4e5b9ull));
    s = mix(s ^ mix(b + 0x94d049bb133111ebull));
    return RngStream(s);
  }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Standard normal N(0, 1).
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    have_spare_ = true;
    return radius * std::cos(angle);
  }

  /// Proper complex normal CN(0, 1): unit total variance.
  std::complex<double> complex_normal() {
    const double re = normal();
    const double im = normal();
    return {re * std::numbers::sqrt2 / 2.0, im * std::numbers::sqrt2 / 2.0};
  }

  /// One QPSK symbol (+-1 +-j)/sqrt(2), all four points equally likely.
  std::complex<double> qpsk() {
    const std::uint64_t bits = engine_();
    const double half = std::numbers::sqrt2 / 2.0;
    return {(bits & 1u) ? half : -half, (bits & 2u) ? half : -half};
  }

 private:
  static std::uint64_t mix(std::uint64_t x) {
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ull;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebull;
    x ^= x >> 31;
    return x;
  }

  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace dmarx
