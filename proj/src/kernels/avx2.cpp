// Compiled with -mavx2 -mfma -ffp-contract=off. Only reached after a runtime
// CPU check, so nothing here may run on a machine without AVX2.

#include <immintrin.h>

#include <algorithm>
#include <cstring>
#include <vector>

#include "uraft/kernels.hpp"

namespace uraft::kernels::avx2 {

namespace {

constexpr int kMr = 6;
constexpr int kNr = 16;
constexpr int kKc = 256;
constexpr int kMc = 96;
constexpr int kNc = 2048;

// op(A)(i, p) packed into kMr-row panels: panel[p * kMr + r].
void pack_a(bool trans, const float* a, int lda, int i0, int mc, int p0, int kc, float* dst) {
  for (int ib = 0; ib < mc; ib += kMr) {
    const int rows = std::min(kMr, mc - ib);
    for (int p = 0; p < kc; ++p) {
      for (int r = 0; r < kMr; ++r) {
        float v = 0.0f;
        if (r < rows) {
          const std::ptrdiff_t i = i0 + ib + r;
          const std::ptrdiff_t kk = p0 + p;
          v = trans ? a[kk * lda + i] : a[i * lda + kk];
        }
        *dst++ = v;
      }
    }
  }
}

// op(B)(p, j) packed into kNr-column panels: panel[p * kNr + c].
void pack_b(bool trans, const float* b, int ldb, int p0, int kc, int j0, int nc, float* dst) {
  for (int jb = 0; jb < nc; jb += kNr) {
    const int cols = std::min(kNr, nc - jb);
    for (int p = 0; p < kc; ++p) {
      const std::ptrdiff_t kk = p0 + p;
      if (!trans && cols == kNr) {
        std::memcpy(dst, b + kk * ldb + j0 + jb, sizeof(float) * kNr);
        dst += kNr;
        continue;
      }
      for (int c = 0; c < kNr; ++c) {
        float v = 0.0f;
        if (c < cols) {
          const std::ptrdiff_t j = j0 + jb + c;
          v = trans ? b[j * ldb + kk] : b[kk * ldb + j];
        }
        *dst++ = v;
      }
    }
  }
}

// acc(6x16) = Apanel * Bpanel over kc, then C += alpha * acc.
void micro_kernel(int kc, const float* a, const float* b, float alpha, float* c, int ldc,
                  int rows, int cols) {
  __m256 c00 = _mm256_setzero_ps(), c01 = _mm256_setzero_ps();
  __m256 c10 = _mm256_setzero_ps(), c11 = _mm256_setzero_ps();
  __m256 c20 = _mm256_setzero_ps(), c21 = _mm256_setzero_ps();
  __m256 c30 = _mm256_setzero_ps(), c31 = _mm256_setzero_ps();
  __m256 c40 = _mm256_setzero_ps(), c41 = _mm256_setzero_ps();
  __m256 c50 = _mm256_setzero_ps(), c51 = _mm256_setzero_ps();
  for (int p = 0; p < kc; ++p) {
    const __m256 b0 = _mm256_loadu_ps(b);
    const __m256 b1 = _mm256_loadu_ps(b + 8);
    __m256 av = _mm256_broadcast_ss(a + 0);
    c00 = _mm256_fmadd_ps(av, b0, c00);
    c01 = _mm256_fmadd_ps(av, b1, c01);
    av = _mm256_broadcast_ss(a + 1);
    c10 = _mm256_fmadd_ps(av, b0, c10);
    c11 = _mm256_fmadd_ps(av, b1, c11);
    av = _mm256_broadcast_ss(a + 2);
    c20 = _mm256_fmadd_ps(av, b0, c20);
    c21 = _mm256_fmadd_ps(av, b1, c21);
    av = _mm256_broadcast_ss(a + 3);
    c30 = _mm256_fmadd_ps(av, b0, c30);
    c31 = _mm256_fmadd_ps(av, b1, c31);
    av = _mm256_broadcast_ss(a + 4);
    c40 = _mm256_fmadd_ps(av, b0, c40);
    c41 = _mm256_fmadd_ps(av, b1, c41);
    av = _mm256_broadcast_ss(a + 5);
    c50 = _mm256_fmadd_ps(av, b0, c50);
    c51 = _mm256_fmadd_ps(av, b1, c51);
    a += kMr;
    b += kNr;
  }
  alignas(32) float tile[kMr * kNr];
  const __m256 va = _mm256_set1_ps(alpha);
  _mm256_store_ps(tile + 0, _mm256_mul_ps(va, c00));
  _mm256_store_ps(tile + 8, _mm256_mul_ps(va, c01));
  _mm256_store_ps(tile + 16, _mm256_mul_ps(va, c10));
  _mm256_store_ps(tile + 24, _mm256_mul_ps(va, c11));
  _mm256_store_ps(tile + 32, _mm256_mul_ps(va, c20));
  _mm256_store_ps(tile + 40, _mm256_mul_ps(va, c21));
  _mm256_store_ps(tile + 48, _mm256_mul_ps(va, c30));
  _mm256_store_ps(tile + 56, _mm256_mul_ps(va, c31));
  _mm256_store_ps(tile + 64, _mm256_mul_ps(va, c40));
  _mm256_store_ps(tile + 72, _mm256_mul_ps(va, c41));
  _mm256_store_ps(tile + 80, _mm256_mul_ps(va, c50));
  _mm256_store_ps(tile + 88, _mm256_mul_ps(va, c51));
  if (cols == kNr) {
    for (int r = 0; r < rows; ++r) {
      float* crow = c + static_cast<std::ptrdiff_t>(r) * ldc;
      _mm256_storeu_ps(crow, _mm256_add_ps(_mm256_loadu_ps(crow), _mm256_load_ps(tile + r * kNr)));
      _mm256_storeu_ps(crow + 8,
                       _mm256_add_ps(_mm256_loadu_ps(crow + 8), _mm256_load_ps(tile + r * kNr + 8)));
    }
  } else {
    for (int r = 0; r < rows; ++r) {
      float* crow = c + static_cast<std::ptrdiff_t>(r) * ldc;
      for (int j = 0; j < cols; ++j) crow[j] += tile[r * kNr + j];
    }
  }
}

}  // namespace

void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a, int lda,
          const float* b, int ldb, float beta, float* c, int ldc) {
  if (m <= 0 || n <= 0) return;
  for (int i = 0; i < m; ++i) {
    float* crow = c + static_cast<std::ptrdiff_t>(i) * ldc;
    if (beta == 0.0f) {
      std::fill(crow, crow + n, 0.0f);
    } else if (beta != 1.0f) {
      for (int j = 0; j < n; ++j) crow[j] *= beta;
    }
  }
  if (k <= 0 || alpha == 0.0f) return;

  thread_local std::vector<float> packed_a;
  thread_local std::vector<float> packed_b;
  packed_a.resize(static_cast<std::size_t>(kMc + kMr) * kKc);
  packed_b.resize(static_cast<std::size_t>(kNc + kNr) * kKc);

  for (int j0 = 0; j0 < n; j0 += kNc) {
    const int nc = std::min(kNc, n - j0);
    for (int p0 = 0; p0 < k; p0 += kKc) {
      const int kc = std::min(kKc, k - p0);
      pack_b(trans_b, b, ldb, p0, kc, j0, nc, packed_b.data());
      for (int i0 = 0; i0 < m; i0 += kMc) {
        const int mc = std::min(kMc, m - i0);
        pack_a(trans_a, a, lda, i0, mc, p0, kc, packed_a.data());
        for (int jb = 0; jb < nc; jb += kNr) {
          const float* bp = packed_b.data() + static_cast<std::ptrdiff_t>(jb / kNr) * kc * kNr;
          for (int ib = 0; ib < mc; ib += kMr) {
            const float* ap = packed_a.data() + static_cast<std::ptrdiff_t>(ib / kMr) * kc * kMr;
            float* ct = c + static_cast<std::ptrdiff_t>(i0 + ib) * ldc + j0 + jb;
            micro_kernel(kc, ap, bp, alpha, ct, ldc, std::min(kMr, mc - ib),
                         std::min(kNr, nc - jb));
          }
        }
      }
    }
  }
}

// Same operation order as the scalar reference without fused multiply-add,
// so results are bit-identical.
void warp(const float* src, int height, int width, const float* ux, const float* uy, float* out,
          std::uint8_t* mask) {
  const float xmax = float(width - 1);
  const float ymax = float(height - 1);
  const int x0max = std::max(width - 2, 0);
  const int y0max = std::max(height - 2, 0);
  const int dx = width > 1 ? 1 : 0;
  const int dy = height > 1 ? width : 0;
  const __m256 zero = _mm256_setzero_ps();
  const __m256 one = _mm256_set1_ps(1.0f);
  const __m256 vxmax = _mm256_set1_ps(xmax);
  const __m256 vymax = _mm256_set1_ps(ymax);
  const __m256i vx0max = _mm256_set1_epi32(x0max);
  const __m256i vy0max = _mm256_set1_epi32(y0max);
  const __m256i vwidth = _mm256_set1_epi32(width);
  const __m256i vdx = _mm256_set1_epi32(dx);
  const __m256i vdy = _mm256_set1_epi32(dy);
  const __m256 lane = _mm256_setr_ps(0, 1, 2, 3, 4, 5, 6, 7);
  for (int y = 0; y < height; ++y) {
    const __m256 vy = _mm256_set1_ps(float(y));
    int x = 0;
    for (; x + 8 <= width; x += 8) {
      const std::ptrdiff_t i = static_cast<std::ptrdiff_t>(y) * width + x;
      const __m256 px = _mm256_add_ps(_mm256_add_ps(_mm256_set1_ps(float(x)), lane),
                                      _mm256_loadu_ps(ux + i));
      const __m256 py = _mm256_add_ps(vy, _mm256_loadu_ps(uy + i));
      if (mask) {
        const __m256 inside = _mm256_and_ps(
            _mm256_and_ps(_mm256_cmp_ps(px, zero, _CMP_GE_OQ), _mm256_cmp_ps(px, vxmax, _CMP_LE_OQ)),
            _mm256_and_ps(_mm256_cmp_ps(py, zero, _CMP_GE_OQ), _mm256_cmp_ps(py, vymax, _CMP_LE_OQ)));
        const int bits = _mm256_movemask_ps(inside);
        for (int l = 0; l < 8; ++l) mask[i + l] = (bits >> l) & 1;
      }
      const __m256 sx = _mm256_min_ps(_mm256_max_ps(px, zero), vxmax);
      const __m256 sy = _mm256_min_ps(_mm256_max_ps(py, zero), vymax);
      const __m256i x0 = _mm256_min_epi32(_mm256_cvttps_epi32(sx), vx0max);
      const __m256i y0 = _mm256_min_epi32(_mm256_cvttps_epi32(sy), vy0max);
      const __m256 ax = _mm256_sub_ps(sx, _mm256_cvtepi32_ps(x0));
      const __m256 ay = _mm256_sub_ps(sy, _mm256_cvtepi32_ps(y0));
      const __m256i base = _mm256_add_epi32(_mm256_mullo_epi32(y0, vwidth), x0);
      const __m256 v00 = _mm256_i32gather_ps(src, base, 4);
      const __m256 v01 = _mm256_i32gather_ps(src, _mm256_add_epi32(base, vdx), 4);
      const __m256i base1 = _mm256_add_epi32(base, vdy);
      const __m256 v10 = _mm256_i32gather_ps(src, base1, 4);
      const __m256 v11 = _mm256_i32gather_ps(src, _mm256_add_epi32(base1, vdx), 4);
      const __m256 bx = _mm256_sub_ps(one, ax);
      const __m256 top = _mm256_add_ps(_mm256_mul_ps(bx, v00), _mm256_mul_ps(ax, v01));
      const __m256 bot = _mm256_add_ps(_mm256_mul_ps(bx, v10), _mm256_mul_ps(ax, v11));
      const __m256 res =
          _mm256_add_ps(_mm256_mul_ps(_mm256_sub_ps(one, ay), top), _mm256_mul_ps(ay, bot));
      _mm256_storeu_ps(out + i, res);
    }
    for (; x < width; ++x) {
      const std::ptrdiff_t j = static_cast<std::ptrdiff_t>(y) * width + x;
      const float px = float(x) + ux[j];
      const float py = float(y) + uy[j];
      if (mask) mask[j] = (px >= 0.0f && px <= xmax && py >= 0.0f && py <= ymax) ? 1 : 0;
      const float sx = std::clamp(px, 0.0f, xmax);
      const float sy = std::clamp(py, 0.0f, ymax);
      const int x0 = std::min(static_cast<int>(sx), x0max);
      const int y0 = std::min(static_cast<int>(sy), y0max);
      const float ax = sx - float(x0);
      const float ay = sy - float(y0);
      const float* p = src + static_cast<std::ptrdiff_t>(y0) * width + x0;
      const float top = (1.0f - ax) * p[0] + ax * p[dx];
      const float bot = (1.0f - ax) * p[dy] + ax * p[dy + dx];
      out[j] = (1.0f - ay) * top + ay * bot;
    }
  }
}

void filter_rows(const float* in, int height, int width, const float* taps, int ntaps,
                 float* out) {
  const int ow = width - ntaps + 1;
  for (int y = 0; y < height; ++y) {
    const float* row = in + static_cast<std::ptrdiff_t>(y) * width;
    float* orow = out + static_cast<std::ptrdiff_t>(y) * ow;
    int x = 0;
    for (; x + 8 <= ow; x += 8) {
      __m256 acc = _mm256_setzero_ps();
      for (int t = 0; t < ntaps; ++t) {
        acc = _mm256_fmadd_ps(_mm256_set1_ps(taps[t]), _mm256_loadu_ps(row + x + t), acc);
      }
      _mm256_storeu_ps(orow + x, acc);
    }
    for (; x < ow; ++x) {
      float acc = 0.0f;
      for (int t = 0; t < ntaps; ++t) acc += taps[t] * row[x + t];
      orow[x] = acc;
    }
  }
}

void filter_cols(const float* in, int height, int width, const float* taps, int ntaps,
                 float* out) {
  const int oh = height - ntaps + 1;
  for (int y = 0; y < oh; ++y) {
    float* orow = out + static_cast<std::ptrdiff_t>(y) * width;
    int x = 0;
    for (; x + 8 <= width; x += 8) {
      __m256 acc = _mm256_setzero_ps();
      for (int t = 0; t < ntaps; ++t) {
        acc = _mm256_fmadd_ps(_mm256_set1_ps(taps[t]),
                              _mm256_loadu_ps(in + static_cast<std::ptrdiff_t>(y + t) * width + x),
                              acc);
      }
      _mm256_storeu_ps(orow + x, acc);
    }
    for (; x < width; ++x) {
      float acc = 0.0f;
      for (int t = 0; t < ntaps; ++t) acc += taps[t] * in[static_cast<std::ptrdiff_t>(y + t) * width + x];
      orow[x] = acc;
    }
  }
}

}  // namespace uraft::kernels::avx2
