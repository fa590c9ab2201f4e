#pragma once

// GEMM and vector primitives behind every dense op. Each primitive has a
// portable scalar reference and, where the CPU supports it, an AVX2/FMA or
// NEON variant. The variant is chosen once at startup; tests force each
// available ISA in turn and compare against the scalar reference.
//
// All matrices are row-major and all primitives accumulate into C.
//   gemm_nn: C[m,n] += A[m,k] * B[k,n]
//   gemm_nt: C[m,n] += A[m,k] * B[n,k]^T
//   gemm_tn: C[m,n] += A[k,m]^T * B[k,n]
//
// Every SIMD variant computes each output element with the same operation
// sequence no matter how many rows are in the call, so a row's result never
// depends on its neighbours.

#include <cstddef>
#include <string_view>
#include <type_traits>
#include <vector>

namespace dtlab::kernels {

enum class Isa { Scalar, Avx2, Neon };

std::string_view isa_name(Isa isa);

struct KernelTable {
  Isa isa;
  void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c);
  void (*gemm_nt)(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c);
  void (*gemm_tn)(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c);
  float (*dot)(std::size_t n, const float* x, const float* y);
  void (*axpy)(std::size_t n, float alpha, const float* x, float* y);
};

bool isa_available(Isa isa);
std::vector<Isa> available_isas();

/// Table for a specific ISA. Throws if the ISA is not available on this host.
const KernelTable& table(Isa isa);

/// Currently selected table. Defaults to the best available ISA; the
/// DTLAB_ISA environment variable (scalar|avx2|neon) overrides the default.
const KernelTable& active();
void select(Isa isa);

namespace scalar {

template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const T* brow = b + j * k;
      T acc{0};
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      c[i * n + j] += acc;
    }
  }
}

template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  for (std::size_t p = 0; p < k; ++p) {
    const T* arow = a + p * m;
    const T* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T av = arow[i];
      T* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
T dot(std::size_t n, const T* x, const T* y) {
  T acc{0};
  for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

template <typename T>
void axpy(std::size_t n, T alpha, const T* x, T* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace scalar

// Precision-generic entry points used by the autodiff layer: float goes
// through the active table, double always takes the scalar reference.
template <typename T>
inline void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  if constexpr (std::is_same_v<T, float>) active().gemm_nn(m, n, k, a, b, c);
  else scalar::gemm_nn(m, n, k, a, b, c);
}
template <typename T>
inline void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  if constexpr (std::is_same_v<T, float>) active().gemm_nt(m, n, k, a, b, c);
  else scalar::gemm_nt(m, n, k, a, b, c);
}
template <typename T>
inline void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  if constexpr (std::is_same_v<T, float>) active().gemm_tn(m, n, k, a, b, c);
  else scalar::gemm_tn(m, n, k, a, b, c);
}

namespace detail {
// Defined in the per-ISA translation units.
const KernelTable& scalar_table();
const KernelTable* avx2_table();  // nullptr when not compiled in
const KernelTable* neon_table();
bool cpu_has_avx2_fma();
}  // namespace detail

}  // namespace dtlab::kernels
