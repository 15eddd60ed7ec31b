#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "uraft/image.hpp"

namespace uraft {

struct WarpResult {
  Image image;
  /// 1 where the sampling position fell inside the source bounds.
  std::vector<std::uint8_t> validity_mask;
};

/// Spatial transformer: output(x, y) = bilinear sample of `source` at
/// (x + u_x, y + u_y), coordinates clamped to the border.
/// Throws DimensionMismatch when the field and image sizes differ.
WarpResult warp(const Image& source, const DisplacementField& field);

/// Bilinear interpolation of the field at a sub-pixel position, clamped to bounds.
std::pair<float, float> sample_field(const DisplacementField& field, double x, double y);

}  // namespace uraft
