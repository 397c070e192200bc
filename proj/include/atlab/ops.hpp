#pragma once

// Differentiable ops over Tensor. Matrices are rank-2 row-major; where an op
// says "rows" it treats every leading dimension as one flattened row axis.

#include <cstdint>
#include <span>
#include <vector>

#include "atlab/tensor.hpp"

namespace atlab {

// a[m x k] * b[k x n]
Tensor matmul(const Tensor& a, const Tensor& b);
// a[m x k] * b[n x k]^T
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
// Every row of `a` plus the vector `row` (numel == a.cols()).
Tensor add_row(const Tensor& a, const Tensor& row);
// s * a, where s is a one-element tensor.
Tensor mul_scalar(const Tensor& a, const Tensor& s);
// Sum of same-shaped tensors.
Tensor add_n(std::span<const Tensor> terms);

Tensor relu(const Tensor& x);
Tensor softsign(const Tensor& x);
Tensor sigmoid(const Tensor& x);

// Max-subtracted softmax over the last dimension. Entries whose `allowed`
// flag is 0 get probability exactly 0; a row with no allowed entry is a
// ShapeError.
Tensor softmax_lastdim(const Tensor& x,
                       std::span<const unsigned char> allowed = {});

// gamma * (x - mean) / sqrt(var + eps) + beta per last-dim vector, using the
// population variance.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);

// Inverted dropout, deterministic in `seed`. Identity when inactive.
Tensor dropout(const Tensor& x, double rate, bool active, std::uint64_t seed);

// Rows of `table` picked by `ids`.
Tensor embedding(const Tensor& table, std::span<const std::size_t> ids);

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t width);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t count);

// Sliding-window unfold along rows for 1-D convolution: row i of the result
// is [x[i - left_pad], ..., x[i - left_pad + kernel - 1]] concatenated, with
// zero rows outside [0, L).
Tensor unfold_rows(const Tensor& x, std::size_t kernel, std::size_t left_pad);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// sum(x .* weights) for a constant weight pattern.
Tensor weighted_sum(const Tensor& x, std::span<const double> weights);
// mean |pred - target|
Tensor mean_abs_error(const Tensor& pred, const Tensor& target);
Tensor mean_squared_error(const Tensor& pred, const Tensor& target);
// Mean binary cross-entropy on logits; positives weighted by pos_weight.
Tensor bce_with_logits(const Tensor& logits, std::span<const double> targets,
                       double pos_weight);

}  // namespace atlab
