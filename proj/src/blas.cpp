#include "cast/blas.hpp"

#include <cblas.h>
#include <mutex>

extern "C" void openblas_set_num_threads(int);

namespace cast::blas {

namespace {
// Force serial execution inside OpenBLAS: parallelism in this project happens
// across batch samples, and serial kernels keep results bit-reproducible.
std::once_flag init_flag;
void init_backend() {
  std::call_once(init_flag, [] { openblas_set_num_threads(1); });
}

int ld(bool trans, std::size_t rows_op, std::size_t cols_op) {
  // Physical column count of the stored matrix.
  return static_cast<int>(trans ? rows_op : cols_op);
}
} // namespace

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          double alpha, const double* a, const double* b, double beta, double* c) {
  init_backend();
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, static_cast<int>(m), static_cast<int>(n),
              static_cast<int>(k), alpha, a, ld(trans_a, m, k), b, ld(trans_b, k, n), beta, c,
              static_cast<int>(n));
}

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          float alpha, const float* a, const float* b, float beta, float* c) {
  init_backend();
  cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, static_cast<int>(m), static_cast<int>(n),
              static_cast<int>(k), alpha, a, ld(trans_a, m, k), b, ld(trans_b, k, n), beta, c,
              static_cast<int>(n));
}

} // namespace cast::blas
