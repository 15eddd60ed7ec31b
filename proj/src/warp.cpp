#include "uraft/warp.hpp"

#include <algorithm>
#include <string>

#include "uraft/error.hpp"
#include "uraft/kernels.hpp"

namespace uraft {

WarpResult warp(const Image& source, const DisplacementField& field) {
  if (source.height() != field.height() || source.width() != field.width()) {
    throw DimensionMismatch("warp: image " + std::to_string(source.height()) + "x" +
                            std::to_string(source.width()) + " vs field " +
                            std::to_string(field.height()) + "x" + std::to_string(field.width()));
  }
  std::vector<float> out(source.size());
  std::vector<std::uint8_t> mask(source.size());
  kernels::warp<float>(source.pixels().data(), source.height(), source.width(),
                       field.ux_plane().data(), field.uy_plane().data(), out.data(), mask.data());
  // Convex combinations of [0,1] values stay in [0,1]; clamp guards rounding.
  for (auto& v : out) v = std::clamp(v, 0.0f, 1.0f);
  return {Image(source.height(), source.width(), std::move(out)), std::move(mask)};
}

std::pair<float, float> sample_field(const DisplacementField& field, double x, double y) {
  if (field.empty()) throw ArgumentError("sample_field on an empty field");
  const int w = field.width();
  const int h = field.height();
  const double sx = std::clamp(x, 0.0, double(w - 1));
  const double sy = std::clamp(y, 0.0, double(h - 1));
  const int x0 = std::min(static_cast<int>(sx), std::max(w - 2, 0));
  const int y0 = std::min(static_cast<int>(sy), std::max(h - 2, 0));
  const int x1 = std::min(x0 + 1, w - 1);
  const int y1 = std::min(y0 + 1, h - 1);
  const double ax = sx - x0;
  const double ay = sy - y0;
  auto lerp2 = [&](auto get) {
    const double top = (1 - ax) * get(x0, y0) + ax * get(x1, y0);
    const double bot = (1 - ax) * get(x0, y1) + ax * get(x1, y1);
    return (1 - ay) * top + ay * bot;
  };
  return {static_cast<float>(lerp2([&](int a, int b) { return double(field.ux(a, b)); })),
          static_cast<float>(lerp2([&](int a, int b) { return double(field.uy(a, b)); }))};
}

}  // namespace uraft
