#include "uraft/image.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "uraft/error.hpp"

namespace uraft {

namespace {

void check_dims(int height, int width) {
  if (height <= 0 || width <= 0) {
    throw InvalidImage("image dimensions must be positive, got " + std::to_string(height) + "x" +
                       std::to_string(width));
  }
}

}  // namespace

Image::Image(int height, int width)
    : height_(height), width_(width), pixels_(static_cast<std::size_t>(height) * width, 0.0f) {
  check_dims(height, width);
}

Image::Image(int height, int width, std::vector<float> pixels)
    : height_(height), width_(width), pixels_(std::move(pixels)) {
  check_dims(height, width);
  if (pixels_.size() != static_cast<std::size_t>(height) * width) {
    throw InvalidImage("pixel count does not match " + std::to_string(height) + "x" +
                       std::to_string(width));
  }
  for (float v : pixels_) {
    if (!std::isfinite(v) || v < 0.0f || v > 1.0f) {
      throw InvalidImage("intensity outside [0,1]: " + std::to_string(v));
    }
  }
}

DisplacementField::DisplacementField(int height, int width)
    : height_(height),
      width_(width),
      ux_(static_cast<std::size_t>(height) * width, 0.0f),
      uy_(static_cast<std::size_t>(height) * width, 0.0f) {
  check_dims(height, width);
}

DisplacementField::DisplacementField(int height, int width, std::vector<float> ux,
                                     std::vector<float> uy)
    : height_(height), width_(width), ux_(std::move(ux)), uy_(std::move(uy)) {
  check_dims(height, width);
  const auto n = static_cast<std::size_t>(height) * width;
  if (ux_.size() != n || uy_.size() != n) {
    throw DimensionMismatch("field planes do not match " + std::to_string(height) + "x" +
                            std::to_string(width));
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(ux_[i]) || !std::isfinite(uy_[i])) {
      throw InvalidImage("non-finite displacement component");
    }
  }
}

std::vector<double> DisplacementField::magnitudes() const {
  std::vector<double> out(ux_.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::hypot(static_cast<double>(ux_[i]), static_cast<double>(uy_[i]));
  }
  return out;
}

double DisplacementField::mean_magnitude() const {
  if (ux_.empty()) return 0.0;
  double sum = 0.0;
  for (double m : magnitudes()) sum += m;
  return sum / static_cast<double>(ux_.size());
}

double DisplacementField::max_magnitude() const {
  double best = 0.0;
  for (double m : magnitudes()) best = std::max(best, m);
  return best;
}

VideoSequence::VideoSequence(std::vector<Image> frames, double fps)
    : frames_(std::move(frames)), fps_(fps) {
  if (frames_.size() < 2) {
    throw InsufficientFrames("a sequence needs at least 2 frames, got " +
                             std::to_string(frames_.size()));
  }
  if (!(fps_ > 0.0) || !std::isfinite(fps_)) {
    throw ArgumentError("fps must be positive");
  }
  for (const auto& f : frames_) {
    if (f.height() != frames_.front().height() || f.width() != frames_.front().width()) {
      throw DimensionMismatch("frame " + std::to_string(f.height()) + "x" +
                              std::to_string(f.width()) + " differs from " +
                              std::to_string(height()) + "x" + std::to_string(width()));
    }
  }
}

Image normalize_image(std::span<const double> raw, int height, int width) {
  if (raw.empty() || height <= 0 || width <= 0 ||
      raw.size() != static_cast<std::size_t>(height) * width) {
    throw InvalidImage("raw grid is empty or does not match its dimensions");
  }
  double lo = raw[0];
  double hi = raw[0];
  for (double v : raw) {
    if (!std::isfinite(v)) throw InvalidImage("raw grid contains a non-finite value");
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  std::vector<float> pixels(raw.size(), 0.0f);
  if (hi > lo) {
    const double scale = 1.0 / (hi - lo);
    for (std::size_t i = 0; i < raw.size(); ++i) {
      pixels[i] = static_cast<float>(std::clamp((raw[i] - lo) * scale, 0.0, 1.0));
    }
  }
  return Image(height, width, std::move(pixels));
}

double mean_abs_difference(const Image& a, const Image& b) {
  if (a.height() != b.height() || a.width() != b.width()) {
    throw DimensionMismatch("images differ in size");
  }
  double sum = 0.0;
  auto pa = a.pixels();
  auto pb = b.pixels();
  for (std::size_t i = 0; i < pa.size(); ++i) sum += std::abs(double(pa[i]) - double(pb[i]));
  return pa.empty() ? 0.0 : sum / static_cast<double>(pa.size());
}

double mean_endpoint_error(const DisplacementField& predicted, const DisplacementField& truth) {
  if (predicted.height() != truth.height() || predicted.width() != truth.width()) {
    throw DimensionMismatch("fields differ in size");
  }
  const auto px = predicted.ux_plane();
  const auto py = predicted.uy_plane();
  const auto tx = truth.ux_plane();
  const auto ty = truth.uy_plane();
  double sum = 0.0;
  for (std::size_t i = 0; i < px.size(); ++i) {
    sum += std::hypot(double(px[i]) - double(tx[i]), double(py[i]) - double(ty[i]));
  }
  return px.empty() ? 0.0 : sum / static_cast<double>(px.size());
}

}  // namespace uraft
