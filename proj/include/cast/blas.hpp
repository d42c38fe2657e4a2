#pragma once

#include <cstddef>

namespace cast::blas {

// Row-major GEMM: C = alpha * op(A) * op(B) + beta * C, where op(A) is m x k
// and op(B) is k x n. Leading dimensions are the physical column counts of the
// untransposed storage. Backed by single-threaded OpenBLAS; deterministic for
// fixed inputs and shapes.
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          double alpha, const double* a, const double* b, double beta, double* c);
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          float alpha, const float* a, const float* b, float beta, float* c);

} // namespace cast::blas
