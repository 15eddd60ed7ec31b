#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace uraft {

/// Column/row pixel coordinate. x indexes columns, y indexes rows.
struct PixelLocation {
  int x = 0;
  int y = 0;
};

/// Single-channel intensity image, row-major, values in [0,1].
class Image {
 public:
  Image() = default;
  Image(int height, int width);
  /// Throws InvalidImage if a value is non-finite or outside [0,1].
  Image(int height, int width, std::vector<float> pixels);

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return pixels_.size(); }
  bool empty() const { return pixels_.empty(); }

  float at(int x, int y) const { return pixels_[static_cast<std::size_t>(y) * width_ + x]; }
  std::span<const float> pixels() const { return pixels_; }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<float> pixels_;
};

/// Per-pixel displacement (u_x, u_y) in pixels. Stored as two planes so the
/// network and the warper can address each component contiguously.
class DisplacementField {
 public:
  DisplacementField() = default;
  DisplacementField(int height, int width);
  /// Throws DimensionMismatch on size mismatch and InvalidImage on non-finite components.
  DisplacementField(int height, int width, std::vector<float> ux, std::vector<float> uy);

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return ux_.size(); }
  bool empty() const { return ux_.empty(); }

  float ux(int x, int y) const { return ux_[index(x, y)]; }
  float uy(int x, int y) const { return uy_[index(x, y)]; }
  void set(int x, int y, float ux, float uy) {
    ux_[index(x, y)] = ux;
    uy_[index(x, y)] = uy;
  }

  std::span<const float> ux_plane() const { return ux_; }
  std::span<const float> uy_plane() const { return uy_; }
  std::span<float> ux_plane() { return ux_; }
  std::span<float> uy_plane() { return uy_; }

  /// Euclidean norm of the vector at every pixel, row-major.
  std::vector<double> magnitudes() const;
  double mean_magnitude() const;
  double max_magnitude() const;

  friend bool operator==(const DisplacementField&, const DisplacementField&) = default;

 private:
  std::size_t index(int x, int y) const { return static_cast<std::size_t>(y) * width_ + x; }

  int height_ = 0;
  int width_ = 0;
  std::vector<float> ux_;
  std::vector<float> uy_;
};

/// Ordered frames of identical size sampled at a fixed rate.
class VideoSequence {
 public:
  /// Throws InsufficientFrames (< 2 frames), DimensionMismatch (mixed sizes)
  /// or ArgumentError (fps <= 0).
  VideoSequence(std::vector<Image> frames, double fps);

  std::size_t size() const { return frames_.size(); }
  double fps() const { return fps_; }
  int height() const { return frames_.front().height(); }
  int width() const { return frames_.front().width(); }
  const Image& operator[](std::size_t i) const { return frames_[i]; }
  const std::vector<Image>& frames() const { return frames_; }

 private:
  std::vector<Image> frames_;
  double fps_;
};

/// Min-max rescale of an arbitrary finite grid into [0,1]. A constant grid
/// maps to all zeros. Throws InvalidImage on empty or non-finite input.
Image normalize_image(std::span<const double> raw, int height, int width);

/// Mean absolute per-pixel difference of two same-sized images.
double mean_abs_difference(const Image& a, const Image& b);

/// Mean end-point error between two fields.
double mean_endpoint_error(const DisplacementField& predicted, const DisplacementField& truth);

}  // namespace uraft
