#pragma once

// Plain SVG renderings of explanation heatmaps and survival step curves.
// No interactivity, no external assets; numeric values are embedded as cell
// text where space allows and as <title> elements everywhere.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include "censurv/common.hpp"
#include "censurv/core.hpp"
#include "censurv/crf.hpp"

namespace censurv {
namespace detail {

inline std::string xml_escape(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

inline std::string short_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

// diverging palette: negative blue, zero white, positive red
inline std::string diverging_color(double v, double scale) {
  double t = scale > 0.0 ? std::clamp(v / scale, -1.0, 1.0) : 0.0;
  int r, g, b;
  if (t >= 0.0) {
    r = 255;
    g = static_cast<int>(std::lround(255.0 * (1.0 - t)));
    b = g;
  } else {
    b = 255;
    g = static_cast<int>(std::lround(255.0 * (1.0 + t)));
    r = g;
  }
  char buf[8];
  std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", r, g, b);
  return buf;
}

}  // namespace detail

// Rows are attributes, columns are intervals, color encodes the weight.
inline std::string explanation_heatmap_svg(const ExplanationSet& theta,
                                           const std::vector<std::string>& feature_names) {
  const int m = theta.m();
  const int d = theta.d_x();
  if (static_cast<int>(feature_names.size()) != d)
    throw Error(ErrorCode::DIM_MISMATCH, "one feature name per attribute required");

  std::size_t longest = 4;
  for (const auto& n : feature_names) longest = std::max(longest, n.size());
  const double left = 12.0 + 7.2 * static_cast<double>(std::min<std::size_t>(longest, 28));
  const double top = 28.0;
  const double cell_w = std::clamp(1100.0 / m, 14.0, 44.0);
  const double cell_h = 22.0;
  const double width = left + cell_w * m + 12.0;
  const double height = top + cell_h * d + 12.0;

  double scale = 0.0;
  for (int t = 1; t <= m; ++t)
    for (int j = 0; j < d; ++j) scale = std::max(scale, std::abs(theta.at(t, j)));

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
     << height << "\" font-family=\"monospace\" font-size=\"11\">\n";
  os << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";

  const int label_step = std::max(1, (m + 19) / 20);
  for (int t = 1; t <= m; t += label_step) {
    const double x = left + cell_w * (t - 0.5);
    os << "<text x=\"" << x << "\" y=\"" << top - 8 << "\" text-anchor=\"middle\">" << t
       << "</text>\n";
  }
  for (int j = 0; j < d; ++j) {
    std::string name = feature_names[static_cast<std::size_t>(j)];
    if (name.size() > 28) name = name.substr(0, 27) + "~";
    os << "<text x=\"" << left - 6 << "\" y=\"" << top + cell_h * j + cell_h * 0.7
       << "\" text-anchor=\"end\">" << detail::xml_escape(name) << "</text>\n";
  }

  const bool show_text = cell_w >= 40.0;
  for (int j = 0; j < d; ++j) {
    for (int t = 1; t <= m; ++t) {
      const double v = theta.at(t, j);
      const double x = left + cell_w * (t - 1);
      const double y = top + cell_h * j;
      os << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << cell_w << "\" height=\""
         << cell_h << "\" fill=\"" << detail::diverging_color(v, scale)
         << "\" stroke=\"#ccc\" stroke-width=\"0.5\">";
      os << "<title>" << detail::xml_escape(feature_names[static_cast<std::size_t>(j)])
         << " interval " << t << ": " << format_double(v) << "</title></rect>\n";
      if (show_text)
        os << "<text x=\"" << x + cell_w / 2 << "\" y=\"" << y + cell_h * 0.7
           << "\" text-anchor=\"middle\">" << detail::short_number(v) << "</text>\n";
    }
  }
  os << "</svg>\n";
  return os.str();
}

// Step plot of S over the grid; survival is constant inside each interval.
inline std::string survival_curve_svg(const std::vector<double>& curve, const TimeGrid& grid) {
  const int m = grid.m();
  if (static_cast<int>(curve.size()) != m + 1)
    throw Error(ErrorCode::DIM_MISMATCH, "curve length does not match grid");

  const double left = 58.0, top = 18.0, plot_w = 560.0, plot_h = 360.0;
  const double width = left + plot_w + 20.0;
  const double height = top + plot_h + 44.0;
  const double cap = grid.cap();
  auto px = [&](double t) { return left + plot_w * (t / cap); };
  auto py = [&](double s) { return top + plot_h * (1.0 - s); };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
     << height << "\" font-family=\"monospace\" font-size=\"11\">\n";
  os << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";

  for (double s : {0.0, 0.25, 0.5, 0.75, 1.0}) {
    os << "<line x1=\"" << left << "\" y1=\"" << py(s) << "\" x2=\"" << left + plot_w
       << "\" y2=\"" << py(s) << "\" stroke=\"#ddd\"/>\n";
    os << "<text x=\"" << left - 6 << "\" y=\"" << py(s) + 4 << "\" text-anchor=\"end\">"
       << detail::short_number(s) << "</text>\n";
  }
  const int x_ticks = std::min(m, 6);
  for (int q = 0; q <= x_ticks; ++q) {
    const double t = cap * q / x_ticks;
    os << "<line x1=\"" << px(t) << "\" y1=\"" << top + plot_h << "\" x2=\"" << px(t)
       << "\" y2=\"" << top + plot_h + 5 << "\" stroke=\"#666\"/>\n";
    os << "<text x=\"" << px(t) << "\" y=\"" << top + plot_h + 18
       << "\" text-anchor=\"middle\">" << detail::short_number(t) << "</text>\n";
  }
  os << "<text x=\"" << left + plot_w / 2 << "\" y=\"" << height - 8
     << "\" text-anchor=\"middle\">days</text>\n";
  os << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << plot_w << "\" height=\""
     << plot_h << "\" fill=\"none\" stroke=\"#666\"/>\n";

  std::ostringstream path;
  path << "M " << px(0.0) << ' ' << py(curve[0]);
  for (int i = 1; i <= m; ++i) {
    path << " H " << px(grid.boundaries[static_cast<std::size_t>(i)]);
    path << " V " << py(curve[static_cast<std::size_t>(i)]);
  }
  os << "<path d=\"" << path.str() << "\" fill=\"none\" stroke=\"#b22\" stroke-width=\"1.5\"/>\n";

  for (int i = 0; i <= m; ++i) {
    const double b = grid.boundaries[static_cast<std::size_t>(i)];
    os << "<circle cx=\"" << px(b) << "\" cy=\"" << py(curve[static_cast<std::size_t>(i)])
       << "\" r=\"2.2\" fill=\"#b22\"><title>day " << format_double(b) << ": S = "
       << format_double(curve[static_cast<std::size_t>(i)]) << "</title></circle>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace censurv
