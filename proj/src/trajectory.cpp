#include "spiralmlp/trajectory.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "spiralmlp/errors.hpp"

namespace spiralmlp {

TraceFormat parse_trace_format(const std::string& s) {
  if (s == "csv" || s == "CSV") return TraceFormat::CSV;
  if (s == "svg" || s == "SVG") return TraceFormat::SVG;
  throw ConfigError("unknown trace format '" + s + "' (expected csv or svg)");
}

std::vector<double> radius_sequence(const OffsetTable& table) {
  std::vector<double> r;
  for (const auto& e : table.entries) r.push_back(std::hypot(e.di, e.dj));
  return r;
}

std::vector<std::size_t> local_maxima(const std::vector<double>& v) {
  std::vector<std::size_t> out;
  for (std::size_t i = 1; i + 1 < v.size(); ++i) {
    if (!(v[i] > v[i - 1])) continue;
    std::size_t j = i;
    while (j + 1 < v.size() && v[j + 1] == v[i]) ++j;
    if (j + 1 < v.size() && v[j + 1] < v[i]) out.push_back(i);
    i = j;
  }
  return out;
}

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

}  // namespace

void write_trajectory_svg(std::ostream& os, const OffsetTable& table, const std::string& title) {
  const int ext = std::max({1, table.extent(), table.real_extent()});
  const double cell = 40.0, margin = 40.0;
  const double side = (2 * ext + 1) * cell;
  const double size = side + 2 * margin;
  const double cx = margin + side / 2, cy = margin + side / 2;
  auto px = [&](double dj) { return cx + dj * cell; };
  auto py = [&](double di) { return cy + di * cell; };

  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(size) << "\" height=\""
     << num(size + 20) << "\" viewBox=\"0 0 " << num(size) << " " << num(size + 20) << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << num(size / 2) << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
        "font-size=\"14\">"
     << title << "</text>\n";
  os << "<g stroke=\"#cccccc\" stroke-width=\"1\">\n";
  for (int k = 0; k <= 2 * ext + 1; ++k) {
    const double t = margin + k * cell;
    os << "<line x1=\"" << num(t) << "\" y1=\"" << num(margin) << "\" x2=\"" << num(t)
       << "\" y2=\"" << num(margin + side) << "\"/>\n";
    os << "<line x1=\"" << num(margin) << "\" y1=\"" << num(t) << "\" x2=\"" << num(margin + side)
       << "\" y2=\"" << num(t) << "\"/>\n";
  }
  os << "</g>\n";

  std::set<GridOffset> cells(table.rounded.begin(), table.rounded.end());
  os << "<g fill=\"#f4a261\" fill-opacity=\"0.6\">\n";
  for (const auto& g : cells)
    os << "<circle cx=\"" << num(px(g.dj)) << "\" cy=\"" << num(py(g.di)) << "\" r=\""
       << num(cell * 0.3) << "\"/>\n";
  os << "</g>\n";

  os << "<polyline fill=\"none\" stroke=\"#1d3557\" stroke-width=\"2\" points=\"";
  for (std::size_t c = 0; c < table.size(); ++c)
    os << (c ? " " : "") << num(px(table.entries[c].dj)) << "," << num(py(table.entries[c].di));
  os << "\"/>\n";
  os << "<g fill=\"#1d3557\">\n";
  for (std::size_t c = 0; c < table.size(); ++c)
    os << "<circle cx=\"" << num(px(table.entries[c].dj)) << "\" cy=\""
       << num(py(table.entries[c].di)) << "\" r=\"3\"><title>c=" << c << "</title></circle>\n";
  os << "</g>\n";
  if (table.size())
    os << "<circle cx=\"" << num(px(table.entries[0].dj)) << "\" cy=\""
       << num(py(table.entries[0].di)) << "\" r=\"6\" fill=\"none\" stroke=\"#e63946\" "
          "stroke-width=\"2\"/>\n";
  os << "</svg>\n";
}

void trajectory_emit(const SpiralConfig& cfg, TraceFormat format, const std::string& path) {
  const OffsetTable table = spiral_offsets(cfg);
  std::ostringstream buf;
  if (format == TraceFormat::CSV) {
    write_offsets_csv(buf, table);
  } else {
    const std::string title = "C_in=" + std::to_string(cfg.c_in) + " A_max=" +
                              std::to_string(cfg.a_max) + " T=" + std::to_string(cfg.period) +
                              " k=" + std::to_string(cfg.partitions);
    write_trajectory_svg(buf, table, title);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << buf.str();
  if (!out) throw std::runtime_error("failed writing " + path);
}

}  // namespace spiralmlp
