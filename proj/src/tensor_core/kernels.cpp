#include "atlab/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace atlab::kernels {
namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1u << 15;

inline void gemm_row(const double* a, const double* b, double* c,
                     std::size_t k, std::size_t n, bool accumulate) {
  if (!accumulate) std::fill(c, c + n, 0.0);
  for (std::size_t p = 0; p < k; ++p) {
    const double av = a[p];
    const double* brow = b + p * n;
    for (std::size_t j = 0; j < n; ++j) c[j] += av * brow[j];
  }
}

inline void gemm_nt_row(const double* a, const double* b, double* c,
                        std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t j = 0; j < n; ++j) {
    const double* brow = b + j * k;
    double acc = 0.0;
    for (std::size_t p = 0; p < k; ++p) acc += a[p] * brow[p];
    c[j] = accumulate ? c[j] + acc : acc;
  }
}

// Row i of a^T * b: column i of a (stride m) against the rows of b.
inline void gemm_tn_row(const double* a_col, const double* b, double* c,
                        std::size_t m, std::size_t k, std::size_t n,
                        bool accumulate) {
  if (!accumulate) std::fill(c, c + n, 0.0);
  for (std::size_t p = 0; p < k; ++p) {
    const double av = a_col[p * m];
    if (av == 0.0) continue;
    const double* brow = b + p * n;
    for (std::size_t j = 0; j < n; ++j) c[j] += av * brow[j];
  }
}

inline void softmax_row(const double* x, double* y, std::size_t cols,
                        const unsigned char* allowed) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < cols; ++j) {
    if (allowed && !allowed[j]) continue;
    mx = std::max(mx, x[j]);
  }
  double total = 0.0;
  for (std::size_t j = 0; j < cols; ++j) {
    if (allowed && !allowed[j]) {
      y[j] = 0.0;
      continue;
    }
    y[j] = std::exp(x[j] - mx);
    total += y[j];
  }
  const double inv = 1.0 / total;
  for (std::size_t j = 0; j < cols; ++j) y[j] *= inv;
}

inline void normalize_row(const double* x, double* xhat, double* inv_std,
                          std::size_t cols, double eps) {
  double mean = 0.0;
  for (std::size_t j = 0; j < cols; ++j) mean += x[j];
  mean /= static_cast<double>(cols);
  double var = 0.0;
  for (std::size_t j = 0; j < cols; ++j) {
    const double d = x[j] - mean;
    var += d * d;
  }
  var /= static_cast<double>(cols);
  const double is = 1.0 / std::sqrt(var + eps);
  *inv_std = is;
  for (std::size_t j = 0; j < cols; ++j) xhat[j] = (x[j] - mean) * is;
}

inline const unsigned char* row_mask(std::span<const unsigned char> allowed,
                                     std::size_t i, std::size_t cols) {
  return allowed.empty() ? nullptr : allowed.data() + i * cols;
}

}  // namespace

namespace serial {

void gemm(std::span<const double> a, std::span<const double> b,
          std::span<double> c, std::size_t m, std::size_t k, std::size_t n,
          bool accumulate) {
  for (std::size_t i = 0; i < m; ++i)
    gemm_row(a.data() + i * k, b.data(), c.data() + i * n, k, n, accumulate);
}

void gemm_nt(std::span<const double> a, std::span<const double> b,
             std::span<double> c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate) {
  for (std::size_t i = 0; i < m; ++i)
    gemm_nt_row(a.data() + i * k, b.data(), c.data() + i * n, k, n,
                accumulate);
}

void gemm_tn(std::span<const double> a, std::span<const double> b,
             std::span<double> c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate) {
  for (std::size_t i = 0; i < m; ++i)
    gemm_tn_row(a.data() + i, b.data(), c.data() + i * n, m, k, n, accumulate);
}

void softmax_rows(std::span<const double> x, std::span<double> y,
                  std::size_t rows, std::size_t cols,
                  std::span<const unsigned char> allowed) {
  for (std::size_t i = 0; i < rows; ++i)
    softmax_row(x.data() + i * cols, y.data() + i * cols, cols,
                row_mask(allowed, i, cols));
}

void normalize_rows(std::span<const double> x, std::span<double> xhat,
                    std::span<double> inv_std, std::size_t rows,
                    std::size_t cols, double eps) {
  for (std::size_t i = 0; i < rows; ++i)
    normalize_row(x.data() + i * cols, xhat.data() + i * cols,
                  inv_std.data() + i, cols, eps);
}

}  // namespace serial

namespace parallel {

void gemm(std::span<const double> a, std::span<const double> b,
          std::span<double> c, std::size_t m, std::size_t k, std::size_t n,
          bool accumulate) {
  const auto rows = static_cast<long>(m);
#pragma omp parallel for schedule(static) if (m * k * n >= kParallelWork)
  for (long i = 0; i < rows; ++i)
    gemm_row(a.data() + i * k, b.data(), c.data() + i * n, k, n, accumulate);
}

void gemm_nt(std::span<const double> a, std::span<const double> b,
             std::span<double> c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate) {
  const auto rows = static_cast<long>(m);
#pragma omp parallel for schedule(static) if (m * k * n >= kParallelWork)
  for (long i = 0; i < rows; ++i)
    gemm_nt_row(a.data() + i * k, b.data(), c.data() + i * n, k, n,
                accumulate);
}

void gemm_tn(std::span<const double> a, std::span<const double> b,
             std::span<double> c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate) {
  const auto rows = static_cast<long>(m);
#pragma omp parallel for schedule(static) if (m * k * n >= kParallelWork)
  for (long i = 0; i < rows; ++i)
    gemm_tn_row(a.data() + i, b.data(), c.data() + i * n, m, k, n, accumulate);
}

void softmax_rows(std::span<const double> x, std::span<double> y,
                  std::size_t rows, std::size_t cols,
                  std::span<const unsigned char> allowed) {
  const auto nrows = static_cast<long>(rows);
#pragma omp parallel for schedule(static) if (rows * cols >= kParallelWork)
  for (long i = 0; i < nrows; ++i)
    softmax_row(x.data() + i * cols, y.data() + i * cols, cols,
                row_mask(allowed, i, cols));
}

void normalize_rows(std::span<const double> x, std::span<double> xhat,
                    std::span<double> inv_std, std::size_t rows,
                    std::size_t cols, double eps) {
  const auto nrows = static_cast<long>(rows);
#pragma omp parallel for schedule(static) if (rows * cols >= kParallelWork)
  for (long i = 0; i < nrows; ++i)
    normalize_row(x.data() + i * cols, xhat.data() + i * cols,
                  inv_std.data() + i, cols, eps);
}

}  // namespace parallel

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace atlab::kernels
