#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>
#include <vector>

#include "uraft/kernels.hpp"

namespace k = uraft::kernels;

namespace {

std::vector<float> noise(std::size_t n, std::mt19937_64& rng, float lo = -1.0f, float hi = 1.0f) {
  std::uniform_real_distribution<float> u(lo, hi);
  std::vector<float> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

// Float GEMM checked against a double-precision triple loop.
std::vector<double> gemm_oracle(bool ta, bool tb, int m, int n, int kk, const std::vector<float>& a,
                                const std::vector<float>& b) {
  std::vector<double> c(static_cast<std::size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int p = 0; p < kk; ++p) {
        const double av = ta ? a[p * m + i] : a[i * kk + p];
        const double bv = tb ? b[j * kk + p] : b[p * n + j];
        s += av * bv;
      }
      c[i * n + j] = s;
    }
  return c;
}

}  // namespace

TEST_CASE("scalar gemm matches a double oracle") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 8; ++trial) {
    const bool ta = trial & 1, tb = trial & 2;
    const int m = 5 + trial, n = 9 + 2 * trial, kk = 13 + trial;
    auto a = noise(m * kk, rng), b = noise(kk * n, rng);
    std::vector<float> c(m * n, 0.0f);
    k::scalar_table().gemm(ta, tb, m, n, kk, 1.0f, a.data(), ta ? m : kk, b.data(), tb ? kk : n,
                           0.0f, c.data(), n);
    auto want = gemm_oracle(ta, tb, m, n, kk, a, b);
    for (std::size_t i = 0; i < c.size(); ++i) CHECK(c[i] == doctest::Approx(want[i]).epsilon(1e-5));
  }
}

TEST_CASE("gemm honours alpha and beta") {
  std::vector<float> a{1, 2, 3, 4}, b{5, 6, 7, 8}, c{1, 1, 1, 1};
  k::scalar_table().gemm(false, false, 2, 2, 2, 2.0f, a.data(), 2, b.data(), 2, 3.0f, c.data(), 2);
  CHECK(c == std::vector<float>{41, 47, 89, 103});
}

TEST_CASE("avx2 kernels agree with the scalar references") {
  const auto* avx = k::avx2_table();
  if (!avx) {
    MESSAGE("AVX2 unavailable on this build or CPU; only scalar kernels exercised");
    return;
  }
  std::mt19937_64 rng(2);

  SUBCASE("gemm within float rounding of the reduction length") {
    const int shapes[][3] = {{1, 1, 1}, {7, 17, 5}, {6, 16, 64}, {33, 70, 129}, {96, 256, 288}};
    for (auto [m, n, kk] : shapes)
      for (int t = 0; t < 4; ++t) {
        const bool ta = t & 1, tb = t & 2;
        auto a = noise(std::size_t(m) * kk, rng), b = noise(std::size_t(kk) * n, rng);
        auto c0 = noise(std::size_t(m) * n, rng);
        auto c1 = c0;
        k::scalar_table().gemm(ta, tb, m, n, kk, 0.5f, a.data(), ta ? m : kk, b.data(),
                               tb ? kk : n, 1.0f, c0.data(), n);
        avx->gemm(ta, tb, m, n, kk, 0.5f, a.data(), ta ? m : kk, b.data(), tb ? kk : n, 1.0f,
                  c1.data(), n);
        const float tol = 4e-7f * kk + 1e-6f;
        for (std::size_t i = 0; i < c0.size(); ++i) CHECK(std::abs(c0[i] - c1[i]) <= tol);
      }
  }

  SUBCASE("warp is bit-identical, mask included") {
    for (auto [h, w] : {std::pair{1, 1}, {5, 9}, {16, 16}, {31, 45}}) {
      auto src = noise(std::size_t(h) * w, rng, 0.0f, 1.0f);
      auto ux = noise(std::size_t(h) * w, rng, -6.0f, 6.0f);
      auto uy = noise(std::size_t(h) * w, rng, -6.0f, 6.0f);
      ux[0] = 0.0f;  // exact integer positions
      uy[0] = 0.0f;
      std::vector<float> o0(src.size()), o1(src.size());
      std::vector<std::uint8_t> m0(src.size()), m1(src.size());
      k::scalar_table().warp(src.data(), h, w, ux.data(), uy.data(), o0.data(), m0.data());
      avx->warp(src.data(), h, w, ux.data(), uy.data(), o1.data(), m1.data());
      CHECK(o0 == o1);
      CHECK(m0 == m1);
    }
  }

  SUBCASE("separable filters") {
    auto taps = noise(11, rng, 0.0f, 0.2f);
    for (auto [h, w] : {std::pair{11, 11}, {16, 40}, {64, 64}, {23, 19}}) {
      auto in = noise(std::size_t(h) * w, rng);
      const int ow = w - 10, oh = h - 10;
      std::vector<float> r0(std::size_t(h) * ow), r1(r0.size());
      k::scalar_table().filter_rows(in.data(), h, w, taps.data(), 11, r0.data());
      avx->filter_rows(in.data(), h, w, taps.data(), 11, r1.data());
      for (std::size_t i = 0; i < r0.size(); ++i) CHECK(std::abs(r0[i] - r1[i]) <= 2e-6f);
      std::vector<float> c0(std::size_t(oh) * w), c1(c0.size());
      k::scalar_table().filter_cols(in.data(), h, w, taps.data(), 11, c0.data());
      avx->filter_cols(in.data(), h, w, taps.data(), 11, c1.data());
      for (std::size_t i = 0; i < c0.size(); ++i) CHECK(std::abs(c0[i] - c1[i]) <= 2e-6f);
    }
  }
}

TEST_CASE("runtime selection") {
  CHECK(k::select(k::Isa::scalar));
  CHECK(k::active().isa == k::Isa::scalar);
  if (k::avx2_table()) {
    CHECK(k::select(k::Isa::avx2));
    CHECK(k::active().isa == k::Isa::avx2);
  } else {
    CHECK_FALSE(k::select(k::Isa::avx2));
  }
}
