#include "emitterlab/svg_plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

namespace emitterlab::svg {

namespace {

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

}  // namespace

std::string render(const Plot& plot) {
  const double left = 70, right = 20, top = 36, bottom = 50;
  const double pw = plot.width - left - right;
  const double ph = plot.height - top - bottom;

  auto tx = [&](double x) { return plot.log_x ? std::log10(x) : x; };
  double x_lo = std::numeric_limits<double>::infinity(), x_hi = -x_lo;
  double y_lo = x_lo, y_hi = -x_lo;
  for (const auto& s : plot.series) {
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i]) || (plot.log_x && s.x[i] <= 0)) continue;
      x_lo = std::min(x_lo, tx(s.x[i]));
      x_hi = std::max(x_hi, tx(s.x[i]));
      y_lo = std::min(y_lo, s.y[i]);
      y_hi = std::max(y_hi, s.y[i]);
    }
  }
  if (!std::isfinite(x_lo)) x_lo = 0, x_hi = 1, y_lo = 0, y_hi = 1;
  if (x_hi == x_lo) x_hi = x_lo + 1;
  if (y_hi == y_lo) y_hi = y_lo + 1;
  const bool bars = std::any_of(plot.series.begin(), plot.series.end(),
                                [](const Series& s) { return s.style == Series::Style::kBars; });
  if (bars) y_lo = std::min(y_lo, 0.0);
  const double pad = 0.05 * (y_hi - y_lo);
  y_lo -= pad;
  y_hi += pad;

  auto px = [&](double x) { return left + (tx(x) - x_lo) / (x_hi - x_lo) * pw; };
  auto py = [&](double y) { return top + (1.0 - (y - y_lo) / (y_hi - y_lo)) * ph; };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << plot.width << "\" height=\"" << plot.height
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << num(plot.width / 2) << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">"
    << escape(plot.title) << "</text>\n";
  o << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << num(pw) << "\" height=\"" << num(ph)
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double fx = x_lo + (x_hi - x_lo) * k / 4.0;
    const double fy = y_lo + (y_hi - y_lo) * k / 4.0;
    const double sx = left + pw * k / 4.0;
    const double sy = top + ph * (1.0 - k / 4.0);
    o << "<text x=\"" << num(sx) << "\" y=\"" << num(top + ph + 16) << "\" text-anchor=\"middle\">"
      << tick_label(plot.log_x ? std::pow(10.0, fx) : fx) << "</text>\n";
    o << "<text x=\"" << num(left - 6) << "\" y=\"" << num(sy + 4) << "\" text-anchor=\"end\">" << tick_label(fy)
      << "</text>\n";
  }
  o << "<text x=\"" << num(left + pw / 2) << "\" y=\"" << num(plot.height - 10) << "\" text-anchor=\"middle\">"
    << escape(plot.x_label) << "</text>\n";
  o << "<text x=\"16\" y=\"" << num(top + ph / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
    << num(top + ph / 2) << ")\">" << escape(plot.y_label) << "</text>\n";

  for (const auto& s : plot.series) {
    const std::size_t n = std::min(s.x.size(), s.y.size());
    if (s.style == Series::Style::kLine) {
      o << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.5\" points=\"";
      for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(s.y[i]) || (plot.log_x && s.x[i] <= 0)) continue;
        o << num(px(s.x[i])) << ',' << num(py(s.y[i])) << ' ';
      }
      o << "\"/>\n";
    } else if (s.style == Series::Style::kMarkers) {
      for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(s.y[i]) || (plot.log_x && s.x[i] <= 0)) continue;
        o << "<circle cx=\"" << num(px(s.x[i])) << "\" cy=\"" << num(py(s.y[i])) << "\" r=\"2\" fill=\"" << s.color
          << "\"/>\n";
      }
    } else {
      const double bw = n > 1 ? std::abs(px(s.x[1]) - px(s.x[0])) * 0.9 : pw * 0.1;
      for (std::size_t i = 0; i < n; ++i) {
        const double y0 = py(0.0);
        const double y1 = py(s.y[i]);
        o << "<rect x=\"" << num(px(s.x[i]) - bw / 2) << "\" y=\"" << num(std::min(y0, y1)) << "\" width=\""
          << num(bw) << "\" height=\"" << num(std::abs(y0 - y1)) << "\" fill=\"" << s.color << "\"/>\n";
      }
    }
  }
  double ly = top + 14;
  for (const auto& s : plot.series) {
    if (s.label.empty()) continue;
    o << "<text x=\"" << num(left + pw - 8) << "\" y=\"" << num(ly) << "\" text-anchor=\"end\" fill=\"" << s.color
      << "\">" << escape(s.label) << "</text>\n";
    ly += 14;
  }
  o << "</svg>\n";
  return o.str();
}

bool write(const std::filesystem::path& path, const Plot& plot) noexcept {
  try {
    std::ofstream out(path);
    if (!out) return false;
    out << render(plot);
    return static_cast<bool>(out);
  } catch (...) {
    return false;
  }
}

}  // namespace emitterlab::svg
