#pragma once

// Dense float kernels used by the autodiff ops.
//
// Every kernel exists twice: `serial::` is the reference implementation and
// `omp::` is the OpenMP version that the ops call. Both variants partition work
// by output row and accumulate each row in the same order, so their results are
// bit-identical regardless of thread count.

#include <cstddef>

namespace emd::kernels {

namespace serial {

/// C[MxN] (+)= A[MxK] * B[KxN]
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c,
             bool accumulate);
/// C[MxN] (+)= A[MxK] * B[NxK]^T
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c,
             bool accumulate);
/// C[MxN] (+)= A[KxM]^T * B[KxN]
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c,
             bool accumulate);
/// Row-wise softmax with max subtraction. `allow` (may be null) zeroes
/// disallowed entries; rows with nothing allowed become all zeros.
void softmax_rows(std::size_t rows, std::size_t n, const float* x, const unsigned char* allow,
                  float* y);
void layer_norm_rows(std::size_t rows, std::size_t n, const float* x, const float* gamma,
                     const float* beta, float eps, float* y, float* xhat, float* inv_std);

}  // namespace serial

namespace omp {

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c,
             bool accumulate);
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c,
             bool accumulate);
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c,
             bool accumulate);
void softmax_rows(std::size_t rows, std::size_t n, const float* x, const unsigned char* allow,
                  float* y);
void layer_norm_rows(std::size_t rows, std::size_t n, const float* x, const float* gamma,
                     const float* beta, float eps, float* y, float* xhat, float* inv_std);

}  // namespace omp

// Default dispatch used throughout the library.
using omp::gemm_nn;
using omp::gemm_nt;
using omp::gemm_tn;
using omp::layer_norm_rows;
using omp::softmax_rows;

}  // namespace emd::kernels
