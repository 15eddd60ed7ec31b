#include <algorithm>
#include <cstring>

#include "uraft/kernels.hpp"

namespace uraft::kernels {

template <typename T>
void gemm_ref(bool trans_a, bool trans_b, int m, int n, int k, T alpha, const T* a, int lda,
              const T* b, int ldb, T beta, T* c, int ldc) {
  for (int i = 0; i < m; ++i) {
    T* crow = c + static_cast<std::ptrdiff_t>(i) * ldc;
    if (beta == T(0)) {
      std::fill(crow, crow + n, T(0));
    } else if (beta != T(1)) {
      for (int j = 0; j < n; ++j) crow[j] *= beta;
    }
    for (int p = 0; p < k; ++p) {
      const T av = alpha * (trans_a ? a[static_cast<std::ptrdiff_t>(p) * lda + i]
                                    : a[static_cast<std::ptrdiff_t>(i) * lda + p]);
      if (av == T(0)) continue;
      if (!trans_b) {
        const T* brow = b + static_cast<std::ptrdiff_t>(p) * ldb;
        for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
      } else {
        for (int j = 0; j < n; ++j) crow[j] += av * b[static_cast<std::ptrdiff_t>(j) * ldb + p];
      }
    }
  }
}

template <typename T>
void warp_ref(const T* src, int height, int width, const T* ux, const T* uy, T* out,
              std::uint8_t* mask) {
  const T xmax = T(width - 1);
  const T ymax = T(height - 1);
  const int x0max = std::max(width - 2, 0);
  const int y0max = std::max(height - 2, 0);
  const int dx = width > 1 ? 1 : 0;
  const int dy = height > 1 ? width : 0;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const std::ptrdiff_t i = static_cast<std::ptrdiff_t>(y) * width + x;
      const T px = T(x) + ux[i];
      const T py = T(y) + uy[i];
      if (mask) mask[i] = (px >= T(0) && px <= xmax && py >= T(0) && py <= ymax) ? 1 : 0;
      const T sx = std::clamp(px, T(0), xmax);
      const T sy = std::clamp(py, T(0), ymax);
      const int x0 = std::min(static_cast<int>(sx), x0max);
      const int y0 = std::min(static_cast<int>(sy), y0max);
      const T ax = sx - T(x0);
      const T ay = sy - T(y0);
      const T* p = src + static_cast<std::ptrdiff_t>(y0) * width + x0;
      const T top = (T(1) - ax) * p[0] + ax * p[dx];
      const T bot = (T(1) - ax) * p[dy] + ax * p[dy + dx];
      out[i] = (T(1) - ay) * top + ay * bot;
    }
  }
}

template <typename T>
void filter_rows_ref(const T* in, int height, int width, const T* taps, int ntaps, T* out) {
  const int ow = width - ntaps + 1;
  for (int y = 0; y < height; ++y) {
    const T* row = in + static_cast<std::ptrdiff_t>(y) * width;
    T* orow = out + static_cast<std::ptrdiff_t>(y) * ow;
    for (int x = 0; x < ow; ++x) {
      T acc = 0;
      for (int t = 0; t < ntaps; ++t) acc += taps[t] * row[x + t];
      orow[x] = acc;
    }
  }
}

template <typename T>
void filter_cols_ref(const T* in, int height, int width, const T* taps, int ntaps, T* out) {
  const int oh = height - ntaps + 1;
  for (int y = 0; y < oh; ++y) {
    T* orow = out + static_cast<std::ptrdiff_t>(y) * width;
    std::fill(orow, orow + width, T(0));
    for (int t = 0; t < ntaps; ++t) {
      const T* row = in + static_cast<std::ptrdiff_t>(y + t) * width;
      const T tap = taps[t];
      for (int x = 0; x < width; ++x) orow[x] += tap * row[x];
    }
  }
}

#define URAFT_INSTANTIATE(T)                                                                   \
  template void gemm_ref<T>(bool, bool, int, int, int, T, const T*, int, const T*, int, T, T*, \
                            int);                                                              \
  template void warp_ref<T>(const T*, int, int, const T*, const T*, T*, std::uint8_t*);        \
  template void filter_rows_ref<T>(const T*, int, int, const T*, int, T*);                     \
  template void filter_cols_ref<T>(const T*, int, int, const T*, int, T*);

URAFT_INSTANTIATE(float)
URAFT_INSTANTIATE(double)
#undef URAFT_INSTANTIATE

}  // namespace uraft::kernels
