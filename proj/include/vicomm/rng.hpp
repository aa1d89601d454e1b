#pragma once

// Counter-based pseudorandom numbers.
//
// Every draw is a pure function of (seed, round, purpose, counter), so any
// device can reproduce any round's randomness without replaying a stream.
// The mixer is the SplitMix64 finalizer; only integer arithmetic is used for
// the integer and uniform outputs, which therefore match on all platforms.

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <string_view>

namespace vicomm::rng {

constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

/// Packs up to eight ASCII characters into a purpose tag.
constexpr std::uint64_t tag(std::string_view name) noexcept {
  std::uint64_t out = 0;
  for (std::size_t i = 0; i < name.size() && i < 8; ++i) {
    out = (out << 8) | static_cast<unsigned char>(name[i]);
  }
  return out;
}

namespace purpose {
inline constexpr std::uint64_t kPermutation = tag("perm");
inline constexpr std::uint64_t kSync = tag("sync");
inline constexpr std::uint64_t kCouplingBase = tag("gen.A");
inline constexpr std::uint64_t kCouplingNoise = tag("gen.B");
inline constexpr std::uint64_t kShiftX = tag("gen.a");
inline constexpr std::uint64_t kShiftY = tag("gen.b");
inline constexpr std::uint64_t kQuadBase = tag("gen.C");
inline constexpr std::uint64_t kQuadNoise = tag("gen.N");
inline constexpr std::uint64_t kQuadShift = tag("gen.c");
inline constexpr std::uint64_t kPowerStart = tag("pow.v0");
}  // namespace purpose

/// Keyed counter-mode generator. Satisfies UniformRandomBitGenerator.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  CounterRng(std::uint64_t seed, std::uint64_t round, std::uint64_t purpose) noexcept
      : key_(mix64(mix64(seed ^ 0x6a09e667f3bcc909ULL) ^ mix64(round + 0x3c6ef372fe94f82bULL) ^
                   mix64(purpose ^ 0xa54ff53a5f1d36f1ULL))) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept {
    ++counter_;
    return mix64(key_ + counter_ * 0x9e3779b97f4a7c15ULL);
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n), unbiased (Lemire's multiply-and-reject).
  std::uint64_t below(std::uint64_t n) noexcept {
    if (n <= 1) return 0;
    unsigned __int128 product = static_cast<unsigned __int128>((*this)()) * n;
    auto low = static_cast<std::uint64_t>(product);
    if (low < n) {
      const std::uint64_t threshold = (0 - n) % n;
      while (low < threshold) {
        product = static_cast<unsigned __int128>((*this)()) * n;
        low = static_cast<std::uint64_t>(product);
      }
    }
    return static_cast<std::uint64_t>(product >> 64);
  }

  bool bernoulli(double p) noexcept { return uniform() < p; }

  /// Standard normal via Box-Muller. Uses libm, so bit-equality across
  /// platforms is not promised for this output.
  double normal() noexcept {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace vicomm::rng
