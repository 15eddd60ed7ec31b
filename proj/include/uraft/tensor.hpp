#pragma once

#include <cstddef>
#include <vector>

namespace uraft {

/// Dense channel-major (C, H, W) array. Scalars are 1x1x1.
template <typename T>
struct Tensor {
  int c = 0;
  int h = 0;
  int w = 0;
  std::vector<T> data;

  Tensor() = default;
  Tensor(int channels, int height, int width, T fill = T(0))
      : c(channels), h(height), w(width),
        data(static_cast<std::size_t>(channels) * height * width, fill) {}

  std::size_t size() const { return data.size(); }
  std::size_t plane_size() const { return static_cast<std::size_t>(h) * w; }
  bool empty() const { return data.empty(); }
  bool same_shape(const Tensor& o) const { return c == o.c && h == o.h && w == o.w; }

  T* plane(int ch) { return data.data() + ch * plane_size(); }
  const T* plane(int ch) const { return data.data() + ch * plane_size(); }
  T& at(int ch, int y, int x) { return data[ch * plane_size() + static_cast<std::size_t>(y) * w + x]; }
  T at(int ch, int y, int x) const {
    return data[ch * plane_size() + static_cast<std::size_t>(y) * w + x];
  }
  T item() const { return data[0]; }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

}  // namespace uraft
