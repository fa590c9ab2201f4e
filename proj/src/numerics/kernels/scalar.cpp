#include "dtlab/kernels.hpp"

namespace dtlab::kernels::detail {

namespace {

void gemm_nn_f(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c) {
  scalar::gemm_nn(m, n, k, a, b, c);
}
void gemm_nt_f(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c) {
  scalar::gemm_nt(m, n, k, a, b, c);
}
void gemm_tn_f(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c) {
  scalar::gemm_tn(m, n, k, a, b, c);
}
float dot_f(std::size_t n, const float* x, const float* y) { return scalar::dot(n, x, y); }
void axpy_f(std::size_t n, float alpha, const float* x, float* y) { scalar::axpy(n, alpha, x, y); }

}  // namespace

const KernelTable& scalar_table() {
  static const KernelTable t{Isa::Scalar, gemm_nn_f, gemm_nt_f, gemm_tn_f, dot_f, axpy_f};
  return t;
}

}  // namespace dtlab::kernels::detail
