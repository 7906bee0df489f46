#ifndef SCL_PLOT_HPP
#define SCL_PLOT_HPP

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "scl/image.hpp"

namespace scl {

struct PlotSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

struct PlotSpec {
  std::string title;
  std::vector<PlotSeries> series;
  std::optional<double> y_min, y_max;
  std::size_t width = 640;
  std::size_t height = 400;
};

namespace plot_detail {

/// 3x5 bitmap glyphs, rows top to bottom.
inline const char* glyph(char c) {
  static const std::array<const char*, 36> alnum{
      "111101101101111", "010110010010111", "111001111100111", "111001111001111", "101101111001001", "111100111001111",
      "111100111101111", "111001001001001", "111101111101111", "111101111001111", "010101111101101", "110101110101110",
      "011100100100011", "110101101101110", "111100110100111", "111100110100100", "011100101101011", "101101111101101",
      "111010010010111", "001001001101010", "101101110101101", "100100100100111", "101111111101101", "110101101101101",
      "010101101101010", "110101110100100", "010101101110011", "110101110101101", "011100010001110", "111010010010010",
      "101101101101111", "101101101101010", "101101111111101", "101101010101101", "101101010010010", "111001010100111"};
  c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  if (c >= '0' && c <= '9') return alnum[static_cast<std::size_t>(c - '0')];
  if (c >= 'A' && c <= 'Z') return alnum[static_cast<std::size_t>(10 + c - 'A')];
  switch (c) {
    case '.': return "000000000000010";
    case '-': return "000000111000000";
    case '_': return "000000000000111";
    case ':': return "000010000010000";
    case '+': return "000010111010000";
    default: return "000000000000000";
  }
}

inline void put(RawImage& img, long x, long y, const std::array<std::uint8_t, 3>& c) {
  if (x < 0 || y < 0 || x >= static_cast<long>(img.width) || y >= static_cast<long>(img.height)) return;
  for (std::size_t k = 0; k < 3; ++k) img.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), k) = c[k];
}

inline void text(RawImage& img, long x, long y, const std::string& s, const std::array<std::uint8_t, 3>& c, long scale = 2) {
  for (char ch : s) {
    const char* g = glyph(ch);
    for (long r = 0; r < 5; ++r) {
      for (long q = 0; q < 3; ++q) {
        if (g[r * 3 + q] != '1') continue;
        for (long dy = 0; dy < scale; ++dy) {
          for (long dx = 0; dx < scale; ++dx) put(img, x + q * scale + dx, y + r * scale + dy, c);
        }
      }
    }
    x += 4 * scale;
  }
}

inline void line(RawImage& img, double x0, double y0, double x1, double y1, const std::array<std::uint8_t, 3>& c) {
  const long steps = static_cast<long>(std::max({std::abs(x1 - x0), std::abs(y1 - y0), 1.0}) * 2);
  for (long i = 0; i <= steps; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(steps);
    const long x = std::lround(x0 + t * (x1 - x0)), y = std::lround(y0 + t * (y1 - y0));
    put(img, x, y, c);
    put(img, x, y + 1, c);
  }
}

inline std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

}  // namespace plot_detail

/// Rasterises a multi-series line chart with axes, tick labels and a legend.
/// Non-finite points break the line.
inline RawImage render_plot(const PlotSpec& spec) {
  using plot_detail::line;
  using plot_detail::text;
  static const std::array<std::array<std::uint8_t, 3>, 6> palette{
      {{31, 119, 180}, {214, 39, 40}, {44, 160, 44}, {255, 127, 14}, {148, 103, 189}, {23, 190, 207}}};
  const std::array<std::uint8_t, 3> black{0, 0, 0}, grid{225, 225, 225};
  RawImage img(spec.height, spec.width, 3, 255);
  const double left = 70, right = static_cast<double>(spec.width) - 20, top = 40,
               bottom = static_cast<double>(spec.height) - 60;

  double xmin = INFINITY, xmax = -INFINITY, ymin = INFINITY, ymax = -INFINITY;
  for (const auto& s : spec.series) {
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  }
  if (!std::isfinite(xmin)) xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  if (spec.y_min) ymin = *spec.y_min;
  if (spec.y_max) ymax = *spec.y_max;
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymax = ymin + 1;
  auto px = [&](double x) { return left + (x - xmin) / (xmax - xmin) * (right - left); };
  auto py = [&](double y) { return bottom - (y - ymin) / (ymax - ymin) * (bottom - top); };

  for (int t = 0; t <= 4; ++t) {
    const double fy = ymin + (ymax - ymin) * t / 4.0, fx = xmin + (xmax - xmin) * t / 4.0;
    line(img, left, py(fy), right, py(fy), grid);
    text(img, 4, static_cast<long>(py(fy)) - 5, plot_detail::tick_label(fy), black);
    text(img, static_cast<long>(px(fx)) - 10, static_cast<long>(bottom) + 8, plot_detail::tick_label(fx), black);
  }
  line(img, left, bottom, right, bottom, black);
  line(img, left, top, left, bottom, black);
  text(img, static_cast<long>(left), 12, spec.title, black);

  for (std::size_t k = 0; k < spec.series.size(); ++k) {
    const auto& s = spec.series[k];
    const auto& c = palette[k % palette.size()];
    for (std::size_t i = 1; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!std::isfinite(s.y[i - 1]) || !std::isfinite(s.y[i]) || !std::isfinite(s.x[i - 1]) || !std::isfinite(s.x[i])) continue;
      line(img, px(s.x[i - 1]), py(s.y[i - 1]), px(s.x[i]), py(s.y[i]), c);
    }
    const long lx = static_cast<long>(left) + static_cast<long>(k % 3) * 190, ly = static_cast<long>(bottom) + 30 +
                                                                                   static_cast<long>(k / 3) * 14;
    line(img, static_cast<double>(lx), static_cast<double>(ly + 4), static_cast<double>(lx + 16), static_cast<double>(ly + 4), c);
    text(img, lx + 22, ly, s.label, black);
  }
  return img;
}

inline void write_plot(const std::filesystem::path& path, const PlotSpec& spec) { write_png(path, render_plot(spec)); }

}  // namespace scl

#endif  // SCL_PLOT_HPP
