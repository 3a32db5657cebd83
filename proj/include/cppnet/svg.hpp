#pragma once

#include <algorithm>
#include <string>

#include "cppnet/benchmark.hpp"
#include "cppnet/decoder.hpp"
#include "cppnet/grid_map.hpp"
#include "cppnet/io.hpp"

namespace cppnet {

namespace detail {

inline std::string num(double v) { return format_double(v); }

inline std::string svg_open(double w, double h) {
  return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(w) + "\" height=\"" + num(h) +
         "\" viewBox=\"0 0 " + num(w) + " " + num(h) + "\">\n";
}

}  // namespace detail

/// Map plus trajectory: one rect per obstacle, one polyline through the cell
/// centers of the stitched path, a circle on the start cell.
inline std::string render_trajectory(const GridMap& map, const Trajectory& traj, double px_per_cell = 20) {
  using detail::num;
  const double w = map.cols() * px_per_cell, h = map.rows() * px_per_cell;
  std::string out = detail::svg_open(w, h);
  out += "<rect class=\"background\" x=\"0\" y=\"0\" width=\"" + num(w) + "\" height=\"" + num(h) +
         "\" fill=\"white\" stroke=\"black\"/>\n";
  for (int r = 0; r < map.rows(); ++r) {
    for (int c = 0; c < map.cols(); ++c) {
      if (!map.is_obstacle({r, c})) continue;
      out += "<rect class=\"obstacle\" x=\"" + num(c * px_per_cell) + "\" y=\"" + num(r * px_per_cell) +
             "\" width=\"" + num(px_per_cell) + "\" height=\"" + num(px_per_cell) + "\" fill=\"black\"/>\n";
    }
  }
  auto center = [&](Cell c) {
    return num((c.col + 0.5) * px_per_cell) + "," + num((c.row + 0.5) * px_per_cell);
  };
  out += "<polyline class=\"trajectory\" fill=\"none\" stroke=\"red\" stroke-width=\"2\" points=\"";
  for (std::size_t k = 0; k < traj.path.size(); ++k) out += (k ? " " : "") + center(traj.path[k]);
  out += "\"/>\n";
  const Cell s = map.start();
  out += "<circle class=\"start\" cx=\"" + num((s.col + 0.5) * px_per_cell) + "\" cy=\"" +
         num((s.row + 0.5) * px_per_cell) + "\" r=\"" + num(px_per_cell / 4) + "\" fill=\"blue\"/>\n";
  out += "</svg>\n";
  return out;
}

/// Box plot of trajectory lengths per method (whiskers at min and max).
inline std::string render_summary(std::span<const MethodSummary> summary) {
  using detail::num;
  if (summary.empty()) throw Error(Errc::empty_records, "nothing to plot");
  const double box_w = 60, gap = 40, top = 20, plot_h = 300, left = 60;
  double lo = summary[0].length.min, hi = summary[0].length.max;
  for (const auto& s : summary) {
    lo = std::min(lo, s.length.min);
    hi = std::max(hi, s.length.max);
  }
  if (hi == lo) hi = lo + 1;
  auto y = [&](double v) { return top + plot_h * (hi - v) / (hi - lo); };
  const double w = left + summary.size() * (box_w + gap) + gap;
  const double h = top + plot_h + 40;
  std::string out = detail::svg_open(w, h);
  out += "<line class=\"axis\" x1=\"" + num(left) + "\" y1=\"" + num(top) + "\" x2=\"" + num(left) + "\" y2=\"" +
         num(top + plot_h) + "\" stroke=\"black\"/>\n";
  out += "<text x=\"4\" y=\"" + num(y(hi) + 4) + "\" font-size=\"10\">" + num(hi) + "</text>\n";
  out += "<text x=\"4\" y=\"" + num(y(lo) + 4) + "\" font-size=\"10\">" + num(lo) + "</text>\n";
  for (std::size_t k = 0; k < summary.size(); ++k) {
    const auto& f = summary[k].length;
    const double x0 = left + gap + k * (box_w + gap);
    const double xm = x0 + box_w / 2;
    auto line = [&](double x1, double y1, double x2, double y2, std::string_view cls) {
      out += "<line class=\"" + std::string(cls) + "\" x1=\"" + num(x1) + "\" y1=\"" + num(y1) + "\" x2=\"" + num(x2) +
             "\" y2=\"" + num(y2) + "\" stroke=\"black\"/>\n";
    };
    line(xm, y(f.max), xm, y(f.q3), "whisker");
    line(xm, y(f.q1), xm, y(f.min), "whisker");
    out += "<rect class=\"box\" x=\"" + num(x0) + "\" y=\"" + num(y(f.q3)) + "\" width=\"" + num(box_w) +
           "\" height=\"" + num(y(f.q1) - y(f.q3)) + "\" fill=\"none\" stroke=\"black\"/>\n";
    line(x0, y(f.median), x0 + box_w, y(f.median), "median");
    out += "<text x=\"" + num(x0) + "\" y=\"" + num(top + plot_h + 20) + "\" font-size=\"12\">" +
           std::string(to_string(summary[k].method)) + "</text>\n";
  }
  out += "</svg>\n";
  return out;
}

}  // namespace cppnet
