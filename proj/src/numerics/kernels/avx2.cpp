// Compiled with -mavx2 -mfma; only reached after a runtime CPU check.
#include "dtlab/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)
#include <immintrin.h>

#include <cmath>
#include <vector>

namespace dtlab::kernels::detail {

namespace {

inline float hsum(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  __m128 shuf = _mm_movehdup_ps(lo);
  __m128 sums = _mm_add_ps(lo, shuf);
  shuf = _mm_movehl_ps(shuf, sums);
  sums = _mm_add_ss(sums, shuf);
  return _mm_cvtss_f32(sums);
}

// One output row: crow[j] = fma(a[p], b[p, j], crow[j]) for p = 0..k-1.
inline void gemm_nn_row(std::size_t n, std::size_t k, const float* arow, const float* b, float* crow) {
  std::size_t j = 0;
  for (; j + 8 <= n; j += 8) {
    __m256 acc = _mm256_loadu_ps(crow + j);
    for (std::size_t p = 0; p < k; ++p) {
      acc = _mm256_fmadd_ps(_mm256_set1_ps(arow[p]), _mm256_loadu_ps(b + p * n + j), acc);
    }
    _mm256_storeu_ps(crow + j, acc);
  }
  for (; j < n; ++j) {
    float acc = crow[j];
    for (std::size_t p = 0; p < k; ++p) acc = std::fma(arow[p], b[p * n + j], acc);
    crow[j] = acc;
  }
}

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c) {
  std::size_t i = 0;
  // Four rows share each B load.
  for (; i + 4 <= m; i += 4) {
    const float* a0 = a + i * k;
    const float* a1 = a0 + k;
    const float* a2 = a1 + k;
    const float* a3 = a2 + k;
    float* c0 = c + i * n;
    float* c1 = c0 + n;
    float* c2 = c1 + n;
    float* c3 = c2 + n;
    std::size_t j = 0;
    for (; j + 8 <= n; j += 8) {
      __m256 r0 = _mm256_loadu_ps(c0 + j);
      __m256 r1 = _mm256_loadu_ps(c1 + j);
      __m256 r2 = _mm256_loadu_ps(c2 + j);
      __m256 r3 = _mm256_loadu_ps(c3 + j);
      for (std::size_t p = 0; p < k; ++p) {
        const __m256 bv = _mm256_loadu_ps(b + p * n + j);
        r0 = _mm256_fmadd_ps(_mm256_set1_ps(a0[p]), bv, r0);
        r1 = _mm256_fmadd_ps(_mm256_set1_ps(a1[p]), bv, r1);
        r2 = _mm256_fmadd_ps(_mm256_set1_ps(a2[p]), bv, r2);
        r3 = _mm256_fmadd_ps(_mm256_set1_ps(a3[p]), bv, r3);
      }
      _mm256_storeu_ps(c0 + j, r0);
      _mm256_storeu_ps(c1 + j, r1);
      _mm256_storeu_ps(c2 + j, r2);
      _mm256_storeu_ps(c3 + j, r3);
    }
    for (; j < n; ++j) {
      for (std::size_t r = 0; r < 4; ++r) {
        const float* ar = a + (i + r) * k;
        float acc = c[(i + r) * n + j];
        for (std::size_t p = 0; p < k; ++p) acc = std::fma(ar[p], b[p * n + j], acc);
        c[(i + r) * n + j] = acc;
      }
    }
  }
  for (; i < m; ++i) gemm_nn_row(n, k, a + i * k, b, c + i * n);
}

float dot(std::size_t n, const float* x, const float* y) {
  __m256 acc = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) acc = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), acc);
  float s = hsum(acc);
  for (; i < n; ++i) s = std::fma(x[i], y[i], s);
  return s;
}

void axpy(std::size_t n, float alpha, const float* x, float* y) {
  const __m256 av = _mm256_set1_ps(alpha);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(y + i, _mm256_fmadd_ps(av, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  }
  for (; i < n; ++i) y[i] = std::fma(alpha, x[i], y[i]);
}

// Transposing one operand into scratch lets nt and tn reuse the register-blocked
// nn kernel; the copy is O(k * rows) against O(m * n * k) arithmetic.
float* scratch(std::size_t size) {
  thread_local std::vector<float> buf;
  if (buf.size() < size) buf.resize(size);
  return buf.data();
}

void transpose(std::size_t rows, std::size_t cols, const float* src, float* dst) {
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
  }
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c) {
  float* bt = scratch(n * k);
  transpose(n, k, b, bt);
  gemm_nn(m, n, k, a, bt, c);
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c) {
  float* at = scratch(m * k);
  transpose(k, m, a, at);
  gemm_nn(m, n, k, at, b, c);
}

}  // namespace

const KernelTable* avx2_table() {
  static const KernelTable t{Isa::Avx2, gemm_nn, gemm_nt, gemm_tn, dot, axpy};
  return &t;
}

bool cpu_has_avx2_fma() {
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
}

}  // namespace dtlab::kernels::detail

#else

namespace dtlab::kernels::detail {
const KernelTable* avx2_table() { return nullptr; }
bool cpu_has_avx2_fma() { return false; }
}  // namespace dtlab::kernels::detail

#endif
