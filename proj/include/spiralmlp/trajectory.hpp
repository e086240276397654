#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "spiralmlp/offsets.hpp"

namespace spiralmlp {

enum class TraceFormat { CSV, SVG };

TraceFormat parse_trace_format(const std::string& s);

/// Radius sqrt(dphi_i^2 + dphi_j^2) of every channel.
std::vector<double> radius_sequence(const OffsetTable& table);

/// Interior strict local maxima of a sequence (plateaus count once, at their
/// first index). Endpoints are not maxima.
std::vector<std::size_t> local_maxima(const std::vector<double>& v);

/// Polyline of (dphi_j, dphi_i) in channel order over a cell grid spanning
/// the table extent, with a marker on each rounded cell and the start point
/// highlighted. The i axis points down, as in image coordinates.
void write_trajectory_svg(std::ostream& os, const OffsetTable& table, const std::string& title);

/// Writes the table for `cfg` as CSV (the offset table schema) or SVG.
/// Throws std::runtime_error when the path cannot be written.
void trajectory_emit(const SpiralConfig& cfg, TraceFormat format, const std::string& path);

}  // namespace spiralmlp
