#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace spiralmlp {

/// Counter-based 64-bit generator.
///
/// Draw number `n` of stream `s` under seed `k` is
///
///     key   = splitmix64(k) ^ splitmix64(s + 0x632BE59BD9B4E019)
///     value = splitmix64(key + n * 0x9E3779B97F4A7C15)
///
/// where splitmix64 is the standard finalizer
///
///     z += 0x9E3779B97F4A7C15
///     z  = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
///     z  = (z ^ (z >> 27)) * 0x94D049BB133111EB
///     z  =  z ^ (z >> 31)
///
/// All arithmetic is modulo 2^64, so every draw is reproducible on any
/// platform and any draw can be computed without generating its
/// predecessors.
class CounterRng {
 public:
  static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

  static constexpr std::uint64_t splitmix64(std::uint64_t z) {
    z += kGolden;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  static constexpr std::uint64_t draw(std::uint64_t seed, std::uint64_t stream,
                                      std::uint64_t counter) {
    const std::uint64_t key =
        splitmix64(seed) ^ splitmix64(stream + 0x632BE59BD9B4E019ULL);
    return splitmix64(key + counter * kGolden);
  }

  explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0,
                      std::uint64_t counter = 0)
      : seed_(seed), stream_(stream), counter_(counter) {}

  std::uint64_t next() { return draw(seed_, stream_, counter_++); }

  /// Uniform integer in [0, n) by the multiply-high reduction
  /// floor(x * n / 2^64). No rejection step, so the draw count per call is
  /// always exactly one.
  std::uint64_t uniform_int(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next()) * n) >> 64);
  }

  /// Uniform double in [0, 1) from the top 53 bits.
  double uniform01() {
    return static_cast<double>(next() >> 11) * 0x1.0p-53;
  }

  /// Standard normal via Box-Muller (cosine branch; two draws per call).
  double normal() {
    const double u1 = 1.0 - uniform01();  // (0, 1]
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Normal with the given std, resampled until it lies within two std.
  double truncated_normal(double std) {
    for (;;) {
      const double z = normal();
      if (std::abs(z) <= 2.0) return z * std;
    }
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t counter_;
};

}  // namespace spiralmlp
