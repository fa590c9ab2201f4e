#include "dtlab/kernels.hpp"

#if defined(__aarch64__) || defined(_M_ARM64)
#include <arm_neon.h>

#include <cmath>

namespace dtlab::kernels::detail {

namespace {

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const float* arow = a + i * k;
    float* crow = c + i * n;
    std::size_t j = 0;
    for (; j + 4 <= n; j += 4) {
      float32x4_t acc = vld1q_f32(crow + j);
      for (std::size_t p = 0; p < k; ++p) acc = vfmaq_n_f32(acc, vld1q_f32(b + p * n + j), arow[p]);
      vst1q_f32(crow + j, acc);
    }
    for (; j < n; ++j) {
      float acc = crow[j];
      for (std::size_t p = 0; p < k; ++p) acc = std::fma(arow[p], b[p * n + j], acc);
      crow[j] = acc;
    }
  }
}

float dot(std::size_t n, const float* x, const float* y) {
  float32x4_t acc = vdupq_n_f32(0.0f);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) acc = vfmaq_f32(acc, vld1q_f32(x + i), vld1q_f32(y + i));
  float s = vaddvq_f32(acc);
  for (; i < n; ++i) s = std::fma(x[i], y[i], s);
  return s;
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) c[i * n + j] += dot(k, a + i * k, b + j * k);
  }
}

void axpy(std::size_t n, float alpha, const float* x, float* y) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) vst1q_f32(y + i, vfmaq_n_f32(vld1q_f32(y + i), vld1q_f32(x + i), alpha));
  for (; i < n; ++i) y[i] = std::fma(alpha, x[i], y[i]);
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c) {
  for (std::size_t p = 0; p < k; ++p) {
    for (std::size_t i = 0; i < m; ++i) axpy(n, a[p * m + i], b + p * n, c + i * n);
  }
}

}  // namespace

const KernelTable* neon_table() {
  static const KernelTable t{Isa::Neon, gemm_nn, gemm_nt, gemm_tn, dot, axpy};
  return &t;
}

}  // namespace dtlab::kernels::detail

#else

namespace dtlab::kernels::detail {
const KernelTable* neon_table() { return nullptr; }
}  // namespace dtlab::kernels::detail

#endif
