#pragma once

// Helpers shared by the unit tests and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "atlab/alignment.hpp"
#include "atlab/model.hpp"
#include "atlab/ops.hpp"
#include "atlab/params.hpp"
#include "atlab/tensor.hpp"

namespace testsupport {

using atlab::Tensor;

inline Tensor random_tensor(atlab::Shape shape, std::mt19937_64& rng,
                            bool requires_grad = true, double lo = -1.0,
                            double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(atlab::numel(shape));
  for (auto& x : v) x = u(rng);
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

inline std::vector<double> random_weights(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

// Relative error with a floor on the denominator so that gradients that
// are zero up to rounding compare by absolute difference (<= 1e-10 passes).
inline double rel_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / denom;
}

// Worst relative error between backward() and central differences over
// every scalar of every leaf in `leaves`. `f` must rebuild the graph from
// the leaves' current values on each call.
inline double gradcheck(std::vector<Tensor>& leaves,
                        const std::function<Tensor()>& f, double h = 1e-5) {
  for (auto& l : leaves) l.zero_grad();
  Tensor loss = f();
  atlab::backward(loss);
  std::vector<std::vector<double>> analytic;
  for (auto& l : leaves) {
    if (l.has_grad())
      analytic.emplace_back(l.grad().begin(), l.grad().end());
    else
      analytic.emplace_back(l.numel(), 0.0);
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    auto data = leaves[i].mutable_data();
    for (std::size_t j = 0; j < data.size(); ++j) {
      const double orig = data[j];
      data[j] = orig + h;
      const double up = f().item();
      data[j] = orig - h;
      const double down = f().item();
      data[j] = orig;
      worst = std::max(worst, rel_error(analytic[i][j], (up - down) / (2 * h)));
    }
  }
  return worst;
}

// Same, over every parameter of a store.
inline double gradcheck_store(atlab::ParameterStore& store,
                              const std::function<Tensor()>& f,
                              double h = 1e-5) {
  std::vector<Tensor> leaves;
  for (auto& e : store.entries()) leaves.push_back(e.value);
  return gradcheck(leaves, f, h);
}

// d=8, 1 layer, 1 head.
inline atlab::model::ModelConfig tiny_model_config() {
  atlab::model::ModelConfig c;
  c.num_layers = 1;
  c.hidden_size = 8;
  c.num_heads = 1;
  c.ffn_filter_size = 12;
  c.ffn_kernel_size = 3;
  c.frame_dim = 4;
  c.prenet_bottleneck_size = 2;
  c.prenet_wide_size = 6;
  c.vocab_size = 5;
  c.num_speakers = 2;
  c.speaker_dim = 3;
  return c;
}

// Random row-stochastic S x T matrix.
inline atlab::alignment::AttentionMatrix random_attention(std::size_t S,
                                                          std::size_t T,
                                                          std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> w(S * T);
  for (std::size_t s = 0; s < S; ++s) {
    double tot = 0.0;
    for (std::size_t t = 0; t < T; ++t) tot += (w[s * T + t] = u(rng));
    for (std::size_t t = 0; t < T; ++t) w[s * T + t] /= tot;
  }
  return {S, T, std::move(w)};
}

// Naive double loop over band membership, in floating point:
// |s - (S/T) t| <= b with a 1e-12 relaxation.
inline double naive_diagonal_rate(const atlab::alignment::AttentionMatrix& a,
                                  std::size_t b) {
  const double k = static_cast<double>(a.frames()) / static_cast<double>(a.tokens());
  double acc = 0.0;
  for (std::size_t t = 0; t < a.tokens(); ++t)
    for (std::size_t s = 0; s < a.frames(); ++s)
      if (std::abs(static_cast<double>(s) - k * static_cast<double>(t)) <=
          static_cast<double>(b) + 1e-12)
        acc += a(s, t);
  return acc / static_cast<double>(a.frames());
}

}  // namespace testsupport
