#include <cstdlib>
#include <string_view>

#include "uraft/kernels.hpp"

namespace uraft::kernels {

#if defined(URAFT_HAVE_AVX2)
namespace avx2 {
void gemm(bool, bool, int, int, int, float, const float*, int, const float*, int, float, float*,
          int);
void warp(const float*, int, int, const float*, const float*, float*, std::uint8_t*);
void filter_rows(const float*, int, int, const float*, int, float*);
void filter_cols(const float*, int, int, const float*, int, float*);
}  // namespace avx2
#endif

namespace {

const KernelTable kScalar{Isa::scalar, "scalar", &gemm_ref<float>, &warp_ref<float>,
                          &filter_rows_ref<float>, &filter_cols_ref<float>};

#if defined(URAFT_HAVE_AVX2)
const KernelTable kAvx2{Isa::avx2, "avx2", &avx2::gemm, &avx2::warp, &avx2::filter_rows,
                        &avx2::filter_cols};
#endif

const KernelTable* initial_table() {
  const KernelTable* best = avx2_table() ? avx2_table() : &kScalar;
  if (const char* env = std::getenv("URAFT_ISA")) {
    const std::string_view want(env);
    if (want == "scalar") return &kScalar;
    if (want == "avx2" && avx2_table()) return avx2_table();
  }
  return best;
}

const KernelTable*& current() {
  static const KernelTable* table = initial_table();
  return table;
}

}  // namespace

bool cpu_supports_avx2() {
#if defined(__x86_64__) || defined(__i386__)
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable& scalar_table() { return kScalar; }

const KernelTable* avx2_table() {
#if defined(URAFT_HAVE_AVX2)
  static const bool ok = cpu_supports_avx2();
  return ok ? &kAvx2 : nullptr;
#else
  return nullptr;
#endif
}

const KernelTable& active() { return *current(); }

bool select(Isa isa) {
  if (isa == Isa::scalar) {
    current() = &kScalar;
    return true;
  }
  if (const KernelTable* t = avx2_table()) {
    current() = t;
    return true;
  }
  return false;
}

}  // namespace uraft::kernels
