#pragma once

// Dense row-major kernels used by the tensor ops.
//
// Every kernel exists twice: a plain serial reference in `serial::` and an
// OpenMP version in `parallel::`. Both compute each output element with the
// same loop order, so results agree bit for bit; the serial copy is kept for
// tests and for the benchmark. The unqualified entry points dispatch to the
// parallel version.

#include <cstddef>
#include <span>

namespace atlab::kernels {

namespace serial {

// c[m x n] (+)= a[m x k] * b[k x n]
void gemm(std::span<const double> a, std::span<const double> b,
          std::span<double> c, std::size_t m, std::size_t k, std::size_t n,
          bool accumulate);
// c[m x n] (+)= a[m x k] * b[n x k]^T
void gemm_nt(std::span<const double> a, std::span<const double> b,
             std::span<double> c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate);
// c[m x n] (+)= a[k x m]^T * b[k x n]
void gemm_tn(std::span<const double> a, std::span<const double> b,
             std::span<double> c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate);

// Row-wise softmax over `cols`. `allowed` (optional, same size as x) masks
// entries to exactly zero probability.
void softmax_rows(std::span<const double> x, std::span<double> y,
                  std::size_t rows, std::size_t cols,
                  std::span<const unsigned char> allowed = {});

// Row-wise (x - mean) / sqrt(var + eps); writes normalized values and the
// per-row inverse standard deviation.
void normalize_rows(std::span<const double> x, std::span<double> xhat,
                    std::span<double> inv_std, std::size_t rows,
                    std::size_t cols, double eps);

}  // namespace serial

namespace parallel {

void gemm(std::span<const double> a, std::span<const double> b,
          std::span<double> c, std::size_t m, std::size_t k, std::size_t n,
          bool accumulate);
void gemm_nt(std::span<const double> a, std::span<const double> b,
             std::span<double> c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate);
void gemm_tn(std::span<const double> a, std::span<const double> b,
             std::span<double> c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate);
void softmax_rows(std::span<const double> x, std::span<double> y,
                  std::size_t rows, std::size_t cols,
                  std::span<const unsigned char> allowed = {});
void normalize_rows(std::span<const double> x, std::span<double> xhat,
                    std::span<double> inv_std, std::size_t rows,
                    std::size_t cols, double eps);

}  // namespace parallel

using parallel::gemm;
using parallel::gemm_nt;
using parallel::gemm_tn;
using parallel::normalize_rows;
using parallel::softmax_rows;

// Number of OpenMP threads the parallel kernels may use (1 without OpenMP).
int max_threads();

}  // namespace atlab::kernels
