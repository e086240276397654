#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace spiralmlp {

/// How fractional offsets are read from the feature map.
enum class Rounding {
  NearestInteger,  ///< round half away from zero, read one cell
  Bilinear,        ///< blend the four surrounding cells
};

std::string to_string(Rounding r);
Rounding parse_rounding(const std::string& s);

/// Parameters of the spiral offset geometry.
struct SpiralConfig {
  std::size_t c_in = 1;
  std::size_t a_max = 0;
  std::size_t period = 8;
  std::size_t partitions = 1;
  Rounding rounding = Rounding::NearestInteger;

  /// Throws ConfigError unless c_in, period >= 1 and partitions divides c_in.
  void validate() const;
};

/// Real-valued displacement in grid cells along (H, W).
struct Offset {
  double di = 0.0;
  double dj = 0.0;
};

struct GridOffset {
  int di = 0;
  int dj = 0;
  auto operator<=>(const GridOffset&) const = default;
};

/// Per-channel displacements. `rounded[c]` is the nearest grid cell of
/// `entries[c]`; which one a layer reads is decided by `rounding`.
struct OffsetTable {
  std::vector<Offset> entries;
  std::vector<GridOffset> rounded;
  Rounding rounding = Rounding::NearestInteger;

  std::size_t size() const { return entries.size(); }
  /// Largest |component| over the rounded offsets.
  int extent() const;
  /// Largest |component| over the real offsets, rounded up.
  int real_extent() const;
};

/// Tent amplitude over the full channel range (single partition).
/// Valid for c in [0, c_in]; requires cfg.partitions == 1.
std::size_t amplitude(const SpiralConfig& cfg, std::size_t c);

/// Tent amplitude replayed over each of the k partitions of length
/// C_w = c_in / k, evaluated at the local coordinate z = c - floor(c/C_w)*C_w.
/// Equals amplitude() when k == 1.
std::size_t amplitude_partitioned(const SpiralConfig& cfg, std::size_t c);

/// Round half away from zero, tolerant of representation error at exact
/// halves and integers (values within 1e-9 snap first).
int round_offset(double v);

OffsetTable spiral_offsets(const SpiralConfig& cfg);

/// Cyclic offsets: ((c mod s_h) - 1, (floor(c / s_h) mod s_w) - 1).
OffsetTable cycle_offsets(std::size_t c_in, std::size_t s_h, std::size_t s_w);

enum class Axis { H, W };

/// Axial shift offsets: o(c) = floor(c / (c_in / s)) - floor(s / 2) * d on the
/// chosen axis, zero on the other. Requires s | c_in.
OffsetTable axial_offsets(std::size_t c_in, std::size_t s, std::size_t d,
                          Axis axis);

/// Offsets drawn uniformly from the integers in [-a_max, a_max]^2. Entry c
/// uses draws 2c (H) and 2c+1 (W) of CounterRng(seed, stream 0), each
/// reduced with CounterRng::uniform_int(2*a_max + 1) - a_max.
OffsetTable random_offsets(std::size_t c_in, std::size_t a_max,
                           std::uint64_t seed);

/// CSV with header `c,dphi_i,dphi_j,round_i,round_j`.
void write_offsets_csv(std::ostream& os, const OffsetTable& table);

}  // namespace spiralmlp
