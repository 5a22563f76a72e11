#pragma once

// Minimal raster plotting: RGB canvas, lines, markers, and scatter/polyline
// charts written as binary PPM.

#include <array>
#include <filesystem>
#include <fstream>

#include "hivae/tensor.hpp"

namespace hivae::raster {

using Rgb = std::array<std::uint8_t, 3>;

inline constexpr Rgb kBlack{0, 0, 0};
inline constexpr Rgb kWhite{255, 255, 255};
inline constexpr Rgb kGrey{200, 200, 200};
inline constexpr std::array<Rgb, 4> kPalette{{{31, 119, 180}, {214, 39, 40}, {44, 160, 44}, {148, 103, 189}}};

struct Canvas {
  int width = 0, height = 0;
  std::vector<std::uint8_t> rgb;

  Canvas(int w, int h, Rgb bg = kWhite) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3) {
    if (w < 1 || h < 1) throw ConfigError("canvas size must be positive");
    for (std::size_t i = 0; i < rgb.size(); i += 3) std::copy(bg.begin(), bg.end(), rgb.begin() + static_cast<std::ptrdiff_t>(i));
  }

  void set(int x, int y, Rgb c) {
    if (x < 0 || y < 0 || x >= width || y >= height) return;
    std::copy(c.begin(), c.end(), rgb.begin() + (static_cast<std::ptrdiff_t>(y) * width + x) * 3);
  }

  Rgb get(int x, int y) const {
    const auto* p = rgb.data() + (static_cast<std::size_t>(y) * width + x) * 3;
    return {p[0], p[1], p[2]};
  }

  // Bresenham line.
  void line(int x0, int y0, int x1, int y1, Rgb c) {
    const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    while (true) {
      set(x0, y0, c);
      if (x0 == x1 && y0 == y1) break;
      const int e2 = 2 * err;
      if (e2 >= dy) {
        err += dy;
        x0 += sx;
      }
      if (e2 <= dx) {
        err += dx;
        y0 += sy;
      }
    }
  }

  void marker(int x, int y, int r, Rgb c) {
    for (int dy = -r; dy <= r; ++dy)
      for (int dx = -r; dx <= r; ++dx) set(x + dx, y + dy, c);
  }

  void write_ppm(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open '" + path.string() + "' for writing");
    os << "P6\n" << width << ' ' << height << "\n255\n";
    os.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
  }
};

// Maps data coordinates to pixels inside a margin, with a light grid.
struct Axes {
  double x0, x1, y0, y1;
  int margin = 24;

  static Axes fit(const std::vector<double>& xs, const std::vector<double>& ys, int margin = 24) {
    if (xs.empty() || ys.empty()) throw ConfigError("plot: no data");
    auto [xmn, xmx] = std::minmax_element(xs.begin(), xs.end());
    auto [ymn, ymx] = std::minmax_element(ys.begin(), ys.end());
    auto pad = [](double lo, double hi) {
      const double span = hi - lo > 0 ? hi - lo : std::max(1.0, std::abs(lo));
      return std::pair{lo - 0.05 * span, hi + 0.05 * span};
    };
    auto [a, b] = pad(*xmn, *xmx);
    auto [c, d] = pad(*ymn, *ymx);
    return {a, b, c, d, margin};
  }

  int px(const Canvas& cv, double x) const {
    return margin + static_cast<int>(std::lround((x - x0) / (x1 - x0) * (cv.width - 2 * margin - 1)));
  }
  int py(const Canvas& cv, double y) const {
    return cv.height - 1 - margin - static_cast<int>(std::lround((y - y0) / (y1 - y0) * (cv.height - 2 * margin - 1)));
  }

  void draw_frame(Canvas& cv) const {
    for (int i = 1; i < 5; ++i) {
      const int gx = margin + i * (cv.width - 2 * margin) / 5, gy = margin + i * (cv.height - 2 * margin) / 5;
      cv.line(gx, margin, gx, cv.height - 1 - margin, kGrey);
      cv.line(margin, gy, cv.width - 1 - margin, gy, kGrey);
    }
    const int l = margin, r = cv.width - 1 - margin, t = margin, b = cv.height - 1 - margin;
    cv.line(l, b, r, b, kBlack);
    cv.line(l, t, l, b, kBlack);
    cv.line(r, t, r, b, kBlack);
    cv.line(l, t, r, t, kBlack);
  }
};

// Scatter of (x, y) points, one colour per group index.
inline Canvas scatter(const std::vector<double>& xs, const std::vector<double>& ys, const std::vector<int>& group = {},
                      int w = 480, int h = 360) {
  if (xs.size() != ys.size()) throw ConfigError("scatter: x/y length mismatch");
  Canvas cv(w, h);
  const Axes ax = Axes::fit(xs, ys);
  ax.draw_frame(cv);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const int g = group.empty() ? 0 : group[i];
    cv.marker(ax.px(cv, xs[i]), ax.py(cv, ys[i]), 3, kPalette[static_cast<std::size_t>(g) % kPalette.size()]);
  }
  return cv;
}

// One polyline per series against the step index.
inline Canvas polylines(const std::vector<std::vector<double>>& series, int w = 480, int h = 360) {
  std::vector<double> xs, ys;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.size(); ++i) {
      xs.push_back(static_cast<double>(i));
      ys.push_back(s[i]);
    }
  Canvas cv(w, h);
  const Axes ax = Axes::fit(xs, ys);
  ax.draw_frame(cv);
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const Rgb c = kPalette[k % kPalette.size()];
    for (std::size_t i = 1; i < s.size(); ++i)
      cv.line(ax.px(cv, static_cast<double>(i - 1)), ax.py(cv, s[i - 1]), ax.px(cv, static_cast<double>(i)), ax.py(cv, s[i]), c);
    if (s.size() == 1) cv.marker(ax.px(cv, 0.0), ax.py(cv, s[0]), 1, c);
  }
  return cv;
}

}  // namespace hivae::raster
