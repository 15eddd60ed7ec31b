#include "uraft/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <limits>

#include "uraft/io.hpp"

namespace uraft {

namespace {

// 3x5 glyphs for tick labels, one row per nibble (bit 2 = left column).
constexpr std::uint8_t kDigits[10][5] = {
    {7, 5, 5, 5, 7}, {2, 6, 2, 2, 7}, {7, 1, 7, 4, 7}, {7, 1, 7, 1, 7}, {5, 5, 7, 1, 1},
    {7, 4, 7, 1, 7}, {7, 4, 7, 5, 7}, {7, 1, 1, 1, 1}, {7, 5, 7, 5, 7}, {7, 5, 7, 1, 7}};
constexpr std::uint8_t kDot[5] = {0, 0, 0, 0, 2};
constexpr std::uint8_t kMinus[5] = {0, 0, 7, 0, 0};

class Canvas {
 public:
  Canvas(int w, int h) : w_(w), h_(h), rgb_(static_cast<std::size_t>(w) * h * 3, 255) {}

  void set(int x, int y, std::array<std::uint8_t, 3> c) {
    if (x < 0 || y < 0 || x >= w_ || y >= h_) return;
    auto* p = &rgb_[(static_cast<std::size_t>(y) * w_ + x) * 3];
    p[0] = c[0];
    p[1] = c[1];
    p[2] = c[2];
  }

  void line(int x0, int y0, int x1, int y1, std::array<std::uint8_t, 3> c) {
    const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    for (;;) {
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

  void text(int x, int y, const std::string& s, std::array<std::uint8_t, 3> c) {
    for (char ch : s) {
      const std::uint8_t* g = nullptr;
      if (ch >= '0' && ch <= '9') g = kDigits[ch - '0'];
      if (ch == '.') g = kDot;
      if (ch == '-') g = kMinus;
      if (g) {
        for (int r = 0; r < 5; ++r)
          for (int b = 0; b < 3; ++b)
            if (g[r] & (4 >> b)) set(x + b, y + r, c);
      }
      x += 4;
    }
  }

  const std::vector<unsigned char>& rgb() const { return rgb_; }

 private:
  int w_, h_;
  std::vector<unsigned char> rgb_;
};

double nice_step(double span) {
  const double raw = span / 5.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  for (double m : {1.0, 2.0, 5.0, 10.0})
    if (raw <= m * mag) return m * mag;
  return 10.0 * mag;
}

std::string label(double v, double step) {
  char buf[32];
  const int decimals = step >= 1.0 ? 0 : static_cast<int>(std::ceil(-std::log10(step)));
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

}  // namespace

bool write_line_plot(const std::vector<PlotSeries>& series, const std::filesystem::path& path,
                     int width, int height) {
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  }
  if (!(x1 >= x0)) {
    std::cerr << "warning: nothing to plot for " << path << '\n';
    return false;
  }
  y0 = std::min(y0, 0.0);
  if (x1 == x0) x1 = x0 + 1.0;
  if (y1 == y0) y1 = y0 + 1.0;

  const int left = 48, right = width - 12, top = 12, bottom = height - 24;
  Canvas canvas(width, height);
  auto px = [&](double x) { return left + static_cast<int>(std::lround((x - x0) / (x1 - x0) * (right - left))); };
  auto py = [&](double y) { return bottom - static_cast<int>(std::lround((y - y0) / (y1 - y0) * (bottom - top))); };
  const std::array<std::uint8_t, 3> grid{225, 225, 225}, ink{40, 40, 40};

  const double xs = nice_step(x1 - x0), ys = nice_step(y1 - y0);
  for (double v = std::ceil(x0 / xs) * xs; v <= x1 + 1e-9 * xs; v += xs) {
    canvas.line(px(v), top, px(v), bottom, grid);
    canvas.text(px(v) - 4, bottom + 6, label(v, xs), ink);
  }
  for (double v = std::ceil(y0 / ys) * ys; v <= y1 + 1e-9 * ys; v += ys) {
    canvas.line(left, py(v), right, py(v), grid);
    const auto l = label(v, ys);
    canvas.text(left - 6 - 4 * static_cast<int>(l.size()), py(v) - 2, l, ink);
  }
  canvas.line(left, top, left, bottom, ink);
  canvas.line(left, bottom, right, bottom, ink);
  canvas.line(right, top, right, bottom, ink);
  canvas.line(left, top, right, top, ink);

  for (const auto& s : series) {
    const std::size_t n = std::min(s.x.size(), s.y.size());
    for (std::size_t i = 1; i < n; ++i) {
      canvas.line(px(s.x[i - 1]), py(s.y[i - 1]), px(s.x[i]), py(s.y[i]), s.color);
    }
  }
  try {
    write_png_rgb(canvas.rgb(), height, width, path);
  } catch (const std::exception& e) {
    std::cerr << "warning: plot not written: " << e.what() << '\n';
    return false;
  }
  return true;
}

}  // namespace uraft
