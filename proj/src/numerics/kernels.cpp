#include "emd/numerics/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace emd::kernels {
namespace {

// Below this many multiply-adds the OpenMP team costs more than it saves.
constexpr std::size_t kParallelWork = 1 << 15;

// One output row of C = A * B where `a_row(kk)` yields A[i, kk].
template <typename ARow>
inline void gemm_row(std::size_t n, std::size_t k, ARow a_row, const float* b, float* c_row,
                     double* acc, bool accumulate) {
  std::fill(acc, acc + n, 0.0);
  for (std::size_t kk = 0; kk < k; ++kk) {
    const double av = a_row(kk);
    const float* brow = b + kk * n;
    for (std::size_t j = 0; j < n; ++j) acc[j] += av * static_cast<double>(brow[j]);
  }
  if (accumulate) {
    for (std::size_t j = 0; j < n; ++j) c_row[j] += static_cast<float>(acc[j]);
  } else {
    for (std::size_t j = 0; j < n; ++j) c_row[j] = static_cast<float>(acc[j]);
  }
}

inline void softmax_row(std::size_t n, const float* x, const unsigned char* allow, float* y) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < n; ++j) {
    if (allow == nullptr || allow[j]) mx = std::max(mx, static_cast<double>(x[j]));
  }
  if (mx == -std::numeric_limits<double>::infinity()) {
    std::fill(y, y + n, 0.0f);
    return;
  }
  double sum = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    if (allow == nullptr || allow[j]) sum += std::exp(static_cast<double>(x[j]) - mx);
  }
  for (std::size_t j = 0; j < n; ++j) {
    y[j] = (allow == nullptr || allow[j])
               ? static_cast<float>(std::exp(static_cast<double>(x[j]) - mx) / sum)
               : 0.0f;
  }
}

inline void layer_norm_row(std::size_t n, const float* x, const float* gamma, const float* beta,
                           float eps, float* y, float* xhat, float* inv_std) {
  double mean = 0.0;
  for (std::size_t j = 0; j < n; ++j) mean += x[j];
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    const double d = x[j] - mean;
    var += d * d;
  }
  var /= static_cast<double>(n);
  const double is = 1.0 / std::sqrt(var + eps);
  *inv_std = static_cast<float>(is);
  for (std::size_t j = 0; j < n; ++j) {
    const double h = (x[j] - mean) * is;
    xhat[j] = static_cast<float>(h);
    y[j] = static_cast<float>(h * gamma[j] + beta[j]);
  }
}

std::vector<float> transpose(std::size_t rows, std::size_t cols, const float* src) {
  std::vector<float> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = src[r * cols + c];
  }
  return out;
}

}  // namespace

namespace serial {

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c,
             bool accumulate) {
  std::vector<double> acc(n);
  for (std::size_t i = 0; i < m; ++i) {
    const float* arow = a + i * k;
    gemm_row(n, k, [arow](std::size_t kk) { return arow[kk]; }, b, c + i * n, acc.data(),
             accumulate);
  }
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c,
             bool accumulate) {
  const std::vector<float> bt = transpose(n, k, b);
  gemm_nn(m, n, k, a, bt.data(), c, accumulate);
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c,
             bool accumulate) {
  std::vector<double> acc(n);
  for (std::size_t i = 0; i < m; ++i) {
    gemm_row(n, k, [a, m, i](std::size_t kk) { return a[kk * m + i]; }, b, c + i * n, acc.data(),
             accumulate);
  }
}

void softmax_rows(std::size_t rows, std::size_t n, const float* x, const unsigned char* allow,
                  float* y) {
  for (std::size_t r = 0; r < rows; ++r) {
    softmax_row(n, x + r * n, allow ? allow + r * n : nullptr, y + r * n);
  }
}

void layer_norm_rows(std::size_t rows, std::size_t n, const float* x, const float* gamma,
                     const float* beta, float eps, float* y, float* xhat, float* inv_std) {
  for (std::size_t r = 0; r < rows; ++r) {
    layer_norm_row(n, x + r * n, gamma, beta, eps, y + r * n, xhat + r * n, inv_std + r);
  }
}

}  // namespace serial

namespace omp {

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c,
             bool accumulate) {
  const bool par = m * n * k >= kParallelWork;
#pragma omp parallel if (par)
  {
    std::vector<double> acc(n);
#pragma omp for schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i) {
      const float* arow = a + i * k;
      gemm_row(n, k, [arow](std::size_t kk) { return arow[kk]; }, b, c + i * n, acc.data(),
               accumulate);
    }
  }
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c,
             bool accumulate) {
  const std::vector<float> bt = transpose(n, k, b);
  gemm_nn(m, n, k, a, bt.data(), c, accumulate);
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c,
             bool accumulate) {
  const bool par = m * n * k >= kParallelWork;
#pragma omp parallel if (par)
  {
    std::vector<double> acc(n);
#pragma omp for schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i) {
      const std::size_t row = static_cast<std::size_t>(i);
      gemm_row(n, k, [a, m, row](std::size_t kk) { return a[kk * m + row]; }, b, c + row * n,
               acc.data(), accumulate);
    }
  }
}

void softmax_rows(std::size_t rows, std::size_t n, const float* x, const unsigned char* allow,
                  float* y) {
  const bool par = rows * n >= kParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (std::ptrdiff_t r = 0; r < static_cast<std::ptrdiff_t>(rows); ++r) {
    softmax_row(n, x + r * n, allow ? allow + r * n : nullptr, y + r * n);
  }
}

void layer_norm_rows(std::size_t rows, std::size_t n, const float* x, const float* gamma,
                     const float* beta, float eps, float* y, float* xhat, float* inv_std) {
  const bool par = rows * n >= kParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (std::ptrdiff_t r = 0; r < static_cast<std::ptrdiff_t>(rows); ++r) {
    layer_norm_row(n, x + r * n, gamma, beta, eps, y + r * n, xhat + r * n, inv_std + r);
  }
}

}  // namespace omp
}  // namespace emd::kernels
