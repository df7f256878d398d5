#pragma once

// Minimal SVG line plots: an axes box, tick labels, polyline series, and
// arrow glyphs for vector fields. The CSV files are the authoritative
// artifacts; these renderings exist for quick visual checks.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

namespace phlearn {

class SvgPlot {
 public:
  SvgPlot(std::string title, std::string x_label, std::string y_label)
      : title_(std::move(title)), x_label_(std::move(x_label)), y_label_(std::move(y_label)) {}

  void add_series(const std::string& name, const std::string& color,
                  const std::vector<double>& xs, const std::vector<double>& ys,
                  double width = 1.5) {
    series_.push_back({name, color, xs, ys, width});
    for (std::size_t i = 0; i < xs.size(); ++i) grow(xs[i], ys[i]);
  }

  void add_arrow(double x, double y, double dx, double dy) {
    arrows_.push_back({x, y, dx, dy});
    grow(x, y);
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write plot: " + path);

    const double w = 640, h = 480, ml = 64, mr = 16, mt = 32, mb = 44;
    double x0 = xmin_, x1 = xmax_, y0 = ymin_, y1 = ymax_;
    if (!(x1 > x0)) x1 = x0 + 1;
    if (!(y1 > y0)) y1 = y0 + 1;
    const double ypad = 0.05 * (y1 - y0);
    y0 -= ypad;
    y1 += ypad;
    auto px = [&](double x) { return ml + (x - x0) / (x1 - x0) * (w - ml - mr); };
    auto py = [&](double y) { return h - mb - (y - y0) / (y1 - y0) * (h - mt - mb); };

    out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w << "' height='" << h
        << "' viewBox='0 0 " << w << " " << h << "'>\n";
    out << "<rect width='" << w << "' height='" << h << "' fill='white'/>\n";
    out << "<text x='" << w / 2 << "' y='20' text-anchor='middle' font-size='14'>" << title_
        << "</text>\n";

    // axes box and ticks
    out << "<rect x='" << ml << "' y='" << mt << "' width='" << w - ml - mr << "' height='"
        << h - mt - mb << "' fill='none' stroke='black'/>\n";
    for (int t = 0; t <= 4; ++t) {
      const double xv = x0 + (x1 - x0) * t / 4.0;
      const double yv = y0 + (y1 - y0) * t / 4.0;
      out << "<line x1='" << px(xv) << "' y1='" << h - mb << "' x2='" << px(xv) << "' y2='"
          << h - mb + 4 << "' stroke='black'/>\n";
      out << "<text x='" << px(xv) << "' y='" << h - mb + 16
          << "' text-anchor='middle' font-size='10'>" << fmt(xv) << "</text>\n";
      out << "<line x1='" << ml - 4 << "' y1='" << py(yv) << "' x2='" << ml << "' y2='" << py(yv)
          << "' stroke='black'/>\n";
      out << "<text x='" << ml - 6 << "' y='" << py(yv) + 3
          << "' text-anchor='end' font-size='10'>" << fmt(yv) << "</text>\n";
    }
    out << "<text x='" << w / 2 << "' y='" << h - 8 << "' text-anchor='middle' font-size='12'>"
        << x_label_ << "</text>\n";
    out << "<text x='14' y='" << h / 2 << "' text-anchor='middle' font-size='12' transform='rotate(-90 14 "
        << h / 2 << ")'>" << y_label_ << "</text>\n";

    for (const auto& a : arrows_) {
      const double scale = 0.35;
      const double ax = px(a.x), ay = py(a.y);
      const double bx = px(a.x + scale * a.dx), by = py(a.y + scale * a.dy);
      out << "<line x1='" << fmt(ax) << "' y1='" << fmt(ay) << "' x2='" << fmt(bx) << "' y2='"
          << fmt(by) << "' stroke='gray' stroke-width='0.8'/>\n";
      const double vx = bx - ax, vy = by - ay;
      const double n = std::sqrt(vx * vx + vy * vy);
      if (n > 1e-9) {
        const double ux = vx / n, uy = vy / n;
        out << "<line x1='" << fmt(bx) << "' y1='" << fmt(by) << "' x2='"
            << fmt(bx - 3 * ux + 1.5 * uy) << "' y2='" << fmt(by - 3 * uy - 1.5 * ux)
            << "' stroke='gray' stroke-width='0.8'/>\n";
        out << "<line x1='" << fmt(bx) << "' y1='" << fmt(by) << "' x2='"
            << fmt(bx - 3 * ux - 1.5 * uy) << "' y2='" << fmt(by - 3 * uy + 1.5 * ux)
            << "' stroke='gray' stroke-width='0.8'/>\n";
      }
    }

    int legend_row = 0;
    for (const auto& s : series_) {
      out << "<polyline fill='none' stroke='" << s.color << "' stroke-width='" << s.width
          << "' points='";
      for (std::size_t i = 0; i < s.xs.size(); ++i)
        out << fmt(px(s.xs[i])) << ',' << fmt(py(s.ys[i])) << ' ';
      out << "'/>\n";
      const double ly = mt + 14 + 14 * legend_row++;
      out << "<line x1='" << w - mr - 120 << "' y1='" << ly << "' x2='" << w - mr - 100
          << "' y2='" << ly << "' stroke='" << s.color << "' stroke-width='2'/>\n";
      out << "<text x='" << w - mr - 96 << "' y='" << ly + 3 << "' font-size='10'>" << s.name
          << "</text>\n";
    }
    out << "</svg>\n";
  }

 private:
  struct Series {
    std::string name, color;
    std::vector<double> xs, ys;
    double width;
  };
  struct Arrow {
    double x, y, dx, dy;
  };

  static std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
  }

  void grow(double x, double y) {
    if (!std::isfinite(x) || !std::isfinite(y)) return;
    xmin_ = std::min(xmin_, x);
    xmax_ = std::max(xmax_, x);
    ymin_ = std::min(ymin_, y);
    ymax_ = std::max(ymax_, y);
  }

  std::string title_, x_label_, y_label_;
  std::vector<Series> series_;
  std::vector<Arrow> arrows_;
  double xmin_ = 1e300, xmax_ = -1e300, ymin_ = 1e300, ymax_ = -1e300;
};

}  // namespace phlearn
