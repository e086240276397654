#include "spiralmlp/offsets.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <ostream>
#include <stdexcept>

#include "spiralmlp/errors.hpp"
#include "spiralmlp/rng.hpp"

namespace spiralmlp {

std::string to_string(Rounding r) {
  return r == Rounding::Bilinear ? "bilinear" : "nearest";
}

Rounding parse_rounding(const std::string& s) {
  if (s == "nearest") return Rounding::NearestInteger;
  if (s == "bilinear") return Rounding::Bilinear;
  throw ConfigError("unknown rounding mode '" + s +
                    "' (expected nearest or bilinear)");
}

void SpiralConfig::validate() const {
  if (c_in < 1) throw ConfigError("spiral config: c_in must be >= 1");
  if (period < 1) throw ConfigError("spiral config: period must be >= 1");
  if (partitions < 1 || partitions > c_in)
    throw ConfigError("spiral config: partitions must lie in [1, c_in]");
  if (c_in % partitions != 0)
    throw ConfigError("spiral config: partitions (" +
                      std::to_string(partitions) + ") must divide c_in (" +
                      std::to_string(c_in) + ")");
}

int OffsetTable::extent() const {
  int e = 0;
  for (const auto& g : rounded) e = std::max({e, std::abs(g.di), std::abs(g.dj)});
  return e;
}

int OffsetTable::real_extent() const {
  double e = 0.0;
  for (const auto& o : entries) e = std::max({e, std::abs(o.di), std::abs(o.dj)});
  return static_cast<int>(std::ceil(e - 1e-12));
}

namespace {

// Tent profile over a segment of `len` channels, exact in integers:
//   floor(2*A*z/len)            for 2z < len
//   floor((2*A*len - 2*A*z)/len) otherwise (z <= len)
std::size_t tent(std::size_t a_max, std::size_t len, std::size_t z) {
  const std::size_t two_a = 2 * a_max;
  if (2 * z < len) return (two_a * z) / len;
  return (two_a * len - two_a * z) / len;
}

double snap(double v) {
  const double r = std::round(v);
  return std::abs(v - r) < 1e-12 ? r + 0.0 : v;
}

}  // namespace

std::size_t amplitude(const SpiralConfig& cfg, std::size_t c) {
  cfg.validate();
  if (cfg.partitions != 1)
    throw std::domain_error("amplitude: requires a single partition");
  if (c > cfg.c_in)
    throw std::domain_error("amplitude: channel " + std::to_string(c) +
                            " outside [0, " + std::to_string(cfg.c_in) + "]");
  return tent(cfg.a_max, cfg.c_in, c);
}

std::size_t amplitude_partitioned(const SpiralConfig& cfg, std::size_t c) {
  cfg.validate();
  if (c > cfg.c_in)
    throw std::domain_error("amplitude_partitioned: channel " +
                            std::to_string(c) + " outside [0, " +
                            std::to_string(cfg.c_in) + "]");
  const std::size_t width = cfg.c_in / cfg.partitions;
  // c == c_in is the closing endpoint of the last partition.
  if (c == cfg.c_in) return tent(cfg.a_max, width, width);
  return tent(cfg.a_max, width, c % width);
}

int round_offset(double v) {
  const double half = std::round(v * 2.0) / 2.0;
  if (std::abs(v - half) < 1e-9) v = half;
  return static_cast<int>(std::round(v));
}

OffsetTable spiral_offsets(const SpiralConfig& cfg) {
  cfg.validate();
  OffsetTable t;
  t.rounding = cfg.rounding;
  t.entries.reserve(cfg.c_in);
  t.rounded.reserve(cfg.c_in);
  for (std::size_t c = 0; c < cfg.c_in; ++c) {
    const double amp = static_cast<double>(amplitude_partitioned(cfg, c));
    // Reduce the angle index first so large c does not lose precision.
    const double theta = 2.0 * std::numbers::pi *
                         static_cast<double>(c % cfg.period) /
                         static_cast<double>(cfg.period);
    const Offset o{snap(amp * std::cos(theta)), snap(amp * std::sin(theta))};
    t.entries.push_back(o);
    t.rounded.push_back({round_offset(o.di), round_offset(o.dj)});
  }
  return t;
}

namespace {

OffsetTable from_grid(std::vector<GridOffset> grid) {
  OffsetTable t;
  t.entries.reserve(grid.size());
  for (const auto& g : grid) t.entries.push_back({double(g.di), double(g.dj)});
  t.rounded = std::move(grid);
  return t;
}

}  // namespace

OffsetTable cycle_offsets(std::size_t c_in, std::size_t s_h, std::size_t s_w) {
  if (c_in < 1 || s_h < 1 || s_w < 1)
    throw std::domain_error("cycle_offsets: c_in, s_h, s_w must be >= 1");
  std::vector<GridOffset> grid;
  grid.reserve(c_in);
  for (std::size_t c = 0; c < c_in; ++c) {
    grid.push_back({static_cast<int>(c % s_h) - 1,
                    static_cast<int>((c / s_h) % s_w) - 1});
  }
  return from_grid(std::move(grid));
}

OffsetTable axial_offsets(std::size_t c_in, std::size_t s, std::size_t d,
                          Axis axis) {
  if (c_in < 1 || s < 1 || d < 1)
    throw std::domain_error("axial_offsets: c_in, s, d must be >= 1");
  if (c_in % s != 0)
    throw std::domain_error("axial_offsets: shift size " + std::to_string(s) +
                            " must divide c_in " + std::to_string(c_in));
  const std::size_t group = c_in / s;
  std::vector<GridOffset> grid;
  grid.reserve(c_in);
  for (std::size_t c = 0; c < c_in; ++c) {
    const int o = static_cast<int>(c / group) - static_cast<int>((s / 2) * d);
    grid.push_back(axis == Axis::H ? GridOffset{o, 0} : GridOffset{0, o});
  }
  return from_grid(std::move(grid));
}

OffsetTable random_offsets(std::size_t c_in, std::size_t a_max,
                           std::uint64_t seed) {
  if (c_in < 1) throw std::domain_error("random_offsets: c_in must be >= 1");
  CounterRng rng(seed, 0);
  const std::uint64_t span = 2 * a_max + 1;
  const int shift = static_cast<int>(a_max);
  std::vector<GridOffset> grid;
  grid.reserve(c_in);
  for (std::size_t c = 0; c < c_in; ++c) {
    const int di = static_cast<int>(rng.uniform_int(span)) - shift;
    const int dj = static_cast<int>(rng.uniform_int(span)) - shift;
    grid.push_back({di, dj});
  }
  return from_grid(std::move(grid));
}

void write_offsets_csv(std::ostream& os, const OffsetTable& table) {
  os << "c,dphi_i,dphi_j,round_i,round_j\n";
  char buf[128];
  for (std::size_t c = 0; c < table.size(); ++c) {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%d,%d\n", c,
                  table.entries[c].di, table.entries[c].dj,
                  table.rounded[c].di, table.rounded[c].dj);
    os << buf;
  }
}

}  // namespace spiralmlp
