#pragma once

// Data-parallel inner loops. Every kernel has a portable scalar reference
// (templated, also used for double precision) and, for float, an AVX2/FMA
// variant compiled in its own translation unit and selected at runtime.

#include <cstdint>
#include <string_view>
#include <type_traits>

namespace uraft::kernels {

enum class Isa { scalar, avx2 };

using GemmFn = void (*)(bool trans_a, bool trans_b, int m, int n, int k, float alpha,
                        const float* a, int lda, const float* b, int ldb, float beta, float* c,
                        int ldc);
using WarpFn = void (*)(const float* src, int height, int width, const float* ux,
                        const float* uy, float* out, std::uint8_t* mask);
using FilterFn = void (*)(const float* in, int height, int width, const float* taps, int ntaps,
                          float* out);

struct KernelTable {
  Isa isa;
  std::string_view name;
  // Row-major C = alpha * op(A) * op(B) + beta * C, op(A) is m x k, op(B) is k x n.
  GemmFn gemm;
  // Backward bilinear warp with border clamping; mask may be null.
  WarpFn warp;
  // Valid 1-D correlation along rows: out is height x (width - ntaps + 1).
  FilterFn filter_rows;
  // Valid 1-D correlation along columns: out is (height - ntaps + 1) x width.
  FilterFn filter_cols;
};

const KernelTable& scalar_table();
/// Null when the build or the CPU lacks AVX2+FMA.
const KernelTable* avx2_table();
bool cpu_supports_avx2();

/// The table used by the library. Defaults to the best supported ISA; the
/// URAFT_ISA environment variable ("scalar" or "avx2") overrides it.
const KernelTable& active();
/// Forces an ISA for the rest of the process. Returns false if unsupported.
bool select(Isa isa);

// Scalar references, instantiated for float and double.
template <typename T>
void gemm_ref(bool trans_a, bool trans_b, int m, int n, int k, T alpha, const T* a, int lda,
              const T* b, int ldb, T beta, T* c, int ldc);
template <typename T>
void warp_ref(const T* src, int height, int width, const T* ux, const T* uy, T* out,
              std::uint8_t* mask);
template <typename T>
void filter_rows_ref(const T* in, int height, int width, const T* taps, int ntaps, T* out);
template <typename T>
void filter_cols_ref(const T* in, int height, int width, const T* taps, int ntaps, T* out);

template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, T alpha, const T* a, int lda,
          const T* b, int ldb, T beta, T* c, int ldc) {
  if constexpr (std::is_same_v<T, float>) {
    active().gemm(trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
  } else {
    gemm_ref<T>(trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
  }
}

template <typename T>
void warp(const T* src, int height, int width, const T* ux, const T* uy, T* out,
          std::uint8_t* mask) {
  if constexpr (std::is_same_v<T, float>) {
    active().warp(src, height, width, ux, uy, out, mask);
  } else {
    warp_ref<T>(src, height, width, ux, uy, out, mask);
  }
}

template <typename T>
void filter_rows(const T* in, int height, int width, const T* taps, int ntaps, T* out) {
  if constexpr (std::is_same_v<T, float>) {
    active().filter_rows(in, height, width, taps, ntaps, out);
  } else {
    filter_rows_ref<T>(in, height, width, taps, ntaps, out);
  }
}

template <typename T>
void filter_cols(const T* in, int height, int width, const T* taps, int ntaps, T* out) {
  if constexpr (std::is_same_v<T, float>) {
    active().filter_cols(in, height, width, taps, ntaps, out);
  } else {
    filter_cols_ref<T>(in, height, width, taps, ntaps, out);
  }
}

}  // namespace uraft::kernels
