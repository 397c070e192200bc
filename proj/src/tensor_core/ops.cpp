#include "atlab/ops.hpp"

#include <cmath>
#include <random>

#include "atlab/errors.hpp"
#include "atlab/kernels.hpp"

namespace atlab {
namespace {

using detail::Node;

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + " expects a matrix, got " +
                     shape_str(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

// Parent gradient buffer if that parent takes part in differentiation.
double* parent_grad(Node& self, std::size_t i) {
  Node& p = *self.parents[i];
  return p.requires_grad ? p.grad_buffer().data() : nullptr;
}

const std::vector<double>& parent_value(Node& self, std::size_t i) {
  return self.parents[i]->value;
}

template <typename Fwd, typename Deriv>
Tensor unary(const char* op, const Tensor& x, Fwd fwd, Deriv deriv) {
  std::vector<double> out(x.numel());
  auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(in[i]);
  return make_result(op, x.shape(), std::move(out), {x},
                     [deriv](Node& self) {
                       double* gx = parent_grad(self, 0);
                       const auto& xv = parent_value(self, 0);
                       for (std::size_t i = 0; i < xv.size(); ++i)
                         gx[i] += self.grad[i] * deriv(xv[i], self.value[i]);
                     });
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions disagree " +
                     shape_str(a.shape()) + " * " + shape_str(b.shape()));
  }
  std::vector<double> out(m * n);
  kernels::gemm(a.data(), b.data(), out, m, k, n, false);
  return make_result("matmul", {m, n}, std::move(out), {a, b},
                     [m, k, n](Node& self) {
                       if (double* ga = parent_grad(self, 0))
                         kernels::gemm_nt(self.grad, parent_value(self, 1),
                                          {ga, m * k}, m, n, k, true);
                       if (double* gb = parent_grad(self, 1))
                         kernels::gemm_tn(parent_value(self, 0), self.grad,
                                          {gb, k * n}, k, m, n, true);
                     });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_nt");
  require_matrix(b, "matmul_nt");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) {
    throw ShapeError("matmul_nt: inner dimensions disagree " +
                     shape_str(a.shape()) + " * " + shape_str(b.shape()) +
                     "^T");
  }
  std::vector<double> out(m * n);
  kernels::gemm_nt(a.data(), b.data(), out, m, k, n, false);
  return make_result("matmul_nt", {m, n}, std::move(out), {a, b},
                     [m, k, n](Node& self) {
                       // dA = dC * B ; dB = dC^T * A
                       if (double* ga = parent_grad(self, 0))
                         kernels::gemm(self.grad, parent_value(self, 1),
                                       {ga, m * k}, m, n, k, true);
                       if (double* gb = parent_grad(self, 1))
                         kernels::gemm_tn(self.grad, parent_value(self, 0),
                                          {gb, n * k}, n, m, k, true);
                     });
}

Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m * n);
  auto in = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = in[i * n + j];
  return make_result("transpose", {n, m}, std::move(out), {a},
                     [m, n](Node& self) {
                       double* ga = parent_grad(self, 0);
                       for (std::size_t i = 0; i < m; ++i)
                         for (std::size_t j = 0; j < n; ++j)
                           ga[i * n + j] += self.grad[j * m + i];
                     });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.data().begin(), a.data().end());
  auto bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return make_result("add", a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (std::size_t p = 0; p < 2; ++p)
      if (double* g = parent_grad(self, p))
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.data().begin(), a.data().end());
  auto bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return make_result("sub", a.shape(), std::move(out), {a, b}, [](Node& self) {
    if (double* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    if (double* g = parent_grad(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.data().begin(), a.data().end());
  auto bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return make_result("mul", a.shape(), std::move(out), {a, b}, [](Node& self) {
    const auto& av = parent_value(self, 0);
    const auto& bv = parent_value(self, 1);
    if (double* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < av.size(); ++i) g[i] += self.grad[i] * bv[i];
    if (double* g = parent_grad(self, 1))
      for (std::size_t i = 0; i < av.size(); ++i) g[i] += self.grad[i] * av[i];
  });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  return make_result("scale", a.shape(), std::move(out), {a},
                     [factor](Node& self) {
                       double* g = parent_grad(self, 0);
                       for (std::size_t i = 0; i < self.grad.size(); ++i)
                         g[i] += factor * self.grad[i];
                     });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  const std::size_t n = a.cols();
  if (row.numel() != n) {
    throw ShapeError("add_row: row of " + std::to_string(row.numel()) +
                     " values for " + std::to_string(n) + " columns");
  }
  const std::size_t m = a.rows();
  std::vector<double> out(a.data().begin(), a.data().end());
  auto rv = row.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += rv[j];
  return make_result("add_row", a.shape(), std::move(out), {a, row},
                     [m, n](Node& self) {
                       if (double* g = parent_grad(self, 0))
                         for (std::size_t i = 0; i < m * n; ++i)
                           g[i] += self.grad[i];
                       if (double* g = parent_grad(self, 1))
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t j = 0; j < n; ++j)
                             g[j] += self.grad[i * n + j];
                     });
}

Tensor mul_scalar(const Tensor& a, const Tensor& s) {
  if (s.numel() != 1) throw ShapeError("mul_scalar: factor must be a scalar");
  const double f = s.item();
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= f;
  return make_result("mul_scalar", a.shape(), std::move(out), {a, s},
                     [](Node& self) {
                       const auto& av = parent_value(self, 0);
                       const double f = parent_value(self, 1)[0];
                       if (double* g = parent_grad(self, 0))
                         for (std::size_t i = 0; i < av.size(); ++i)
                           g[i] += f * self.grad[i];
                       if (double* g = parent_grad(self, 1)) {
                         double acc = 0.0;
                         for (std::size_t i = 0; i < av.size(); ++i)
                           acc += av[i] * self.grad[i];
                         g[0] += acc;
                       }
                     });
}

Tensor add_n(std::span<const Tensor> terms) {
  if (terms.empty()) throw ShapeError("add_n: no terms");
  std::vector<double> out(terms[0].data().begin(), terms[0].data().end());
  for (std::size_t t = 1; t < terms.size(); ++t) {
    require_same_shape(terms[0], terms[t], "add_n");
    auto v = terms[t].data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += v[i];
  }
  return make_result("add_n", terms[0].shape(), std::move(out),
                     std::vector<Tensor>(terms.begin(), terms.end()),
                     [](Node& self) {
                       for (std::size_t p = 0; p < self.parents.size(); ++p)
                         if (double* g = parent_grad(self, p))
                           for (std::size_t i = 0; i < self.grad.size(); ++i)
                             g[i] += self.grad[i];
                     });
}

Tensor relu(const Tensor& x) {
  return unary(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor softsign(const Tensor& x) {
  return unary(
      "softsign", x, [](double v) { return v / (1.0 + std::abs(v)); },
      [](double v, double) {
        const double d = 1.0 + std::abs(v);
        return 1.0 / (d * d);
      });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      "sigmoid", x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor softmax_lastdim(const Tensor& x, std::span<const unsigned char> allowed) {
  const std::size_t cols = x.cols();
  if (x.rank() == 0 || cols == 0) {
    throw ShapeError("softmax_lastdim: empty last dimension");
  }
  const std::size_t rows = x.rows();
  if (!allowed.empty()) {
    if (allowed.size() != x.numel())
      throw ShapeError("softmax_lastdim: mask size does not match input");
    for (std::size_t i = 0; i < rows; ++i) {
      bool any = false;
      for (std::size_t j = 0; j < cols; ++j) any = any || allowed[i * cols + j];
      if (!any) throw ShapeError("softmax_lastdim: fully masked row");
    }
  }
  std::vector<double> out(x.numel());
  kernels::softmax_rows(x.data(), out, rows, cols, allowed);
  return make_result("softmax", x.shape(), std::move(out), {x},
                     [rows, cols](Node& self) {
                       double* g = parent_grad(self, 0);
                       for (std::size_t i = 0; i < rows; ++i) {
                         const double* y = self.value.data() + i * cols;
                         const double* gy = self.grad.data() + i * cols;
                         double dot = 0.0;
                         for (std::size_t j = 0; j < cols; ++j)
                           dot += y[j] * gy[j];
                         for (std::size_t j = 0; j < cols; ++j)
                           g[i * cols + j] += y[j] * (gy[j] - dot);
                       }
                     });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps) {
  const std::size_t d = x.cols();
  if (d == 0) throw ShapeError("layer_norm: empty vectors");
  if (gamma.numel() != d || beta.numel() != d)
    throw ShapeError("layer_norm: gamma/beta must have " + std::to_string(d) +
                     " entries");
  if (!(eps > 0.0)) throw ParameterError("layer_norm: epsilon must be > 0");
  const std::size_t rows = x.rows();
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  kernels::normalize_rows(x.data(), *xhat, *inv_std, rows, d, eps);
  std::vector<double> out(x.numel());
  auto gv = gamma.data();
  auto bv = beta.data();
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < d; ++j)
      out[i * d + j] = gv[j] * (*xhat)[i * d + j] + bv[j];
  return make_result(
      "layer_norm", x.shape(), std::move(out), {x, gamma, beta},
      [rows, d, xhat, inv_std](Node& self) {
        const auto& gv = parent_value(self, 1);
        double* gx = parent_grad(self, 0);
        double* gg = parent_grad(self, 1);
        double* gb = parent_grad(self, 2);
        std::vector<double> dxhat(d);
        for (std::size_t i = 0; i < rows; ++i) {
          const double* gy = self.grad.data() + i * d;
          const double* xh = xhat->data() + i * d;
          double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            if (gg) gg[j] += gy[j] * xh[j];
            if (gb) gb[j] += gy[j];
            dxhat[j] = gy[j] * gv[j];
            mean_dxhat += dxhat[j];
            mean_dxhat_xhat += dxhat[j] * xh[j];
          }
          if (!gx) continue;
          mean_dxhat /= static_cast<double>(d);
          mean_dxhat_xhat /= static_cast<double>(d);
          const double is = (*inv_std)[i];
          for (std::size_t j = 0; j < d; ++j)
            gx[i * d + j] +=
                is * (dxhat[j] - mean_dxhat - xh[j] * mean_dxhat_xhat);
        }
      });
}

Tensor dropout(const Tensor& x, double rate, bool active, std::uint64_t seed) {
  if (!(rate >= 0.0 && rate < 1.0))
    throw ParameterError("dropout: rate must lie in [0, 1)");
  if (!active || rate == 0.0) return x;
  std::mt19937_64 rng(seed);
  auto mask = std::make_shared<std::vector<double>>(x.numel());
  const double keep_scale = 1.0 / (1.0 - rate);
  constexpr double kInv53 = 1.0 / 9007199254740992.0;  // 2^-53
  for (auto& m : *mask) {
    const double u = static_cast<double>(rng() >> 11) * kInv53;
    m = u < rate ? 0.0 : keep_scale;
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= (*mask)[i];
  return make_result("dropout", x.shape(), std::move(out), {x},
                     [mask](Node& self) {
                       double* g = parent_grad(self, 0);
                       for (std::size_t i = 0; i < mask->size(); ++i)
                         g[i] += self.grad[i] * (*mask)[i];
                     });
}

Tensor embedding(const Tensor& table, std::span<const std::size_t> ids) {
  require_matrix(table, "embedding");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  std::vector<double> out(ids.size() * d);
  auto tv = table.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= vocab)
      throw ParameterError("embedding: id " + std::to_string(ids[i]) +
                           " outside vocabulary of " + std::to_string(vocab));
    std::copy_n(tv.begin() + ids[i] * d, d, out.begin() + i * d);
  }
  std::vector<std::size_t> idv(ids.begin(), ids.end());
  return make_result("embedding", {ids.size(), d}, std::move(out), {table},
                     [idv = std::move(idv), d](Node& self) {
                       double* g = parent_grad(self, 0);
                       for (std::size_t i = 0; i < idv.size(); ++i)
                         for (std::size_t j = 0; j < d; ++j)
                           g[idv[i] * d + j] += self.grad[i * d + j];
                     });
}

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t width) {
  require_matrix(x, "slice_cols");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (start + width > n) throw ShapeError("slice_cols: range out of bounds");
  std::vector<double> out(m * width);
  auto in = x.data();
  for (std::size_t i = 0; i < m; ++i)
    std::copy_n(in.begin() + i * n + start, width, out.begin() + i * width);
  return make_result("slice_cols", {m, width}, std::move(out), {x},
                     [m, n, start, width](Node& self) {
                       double* g = parent_grad(self, 0);
                       for (std::size_t i = 0; i < m; ++i)
                         for (std::size_t j = 0; j < width; ++j)
                           g[i * n + start + j] += self.grad[i * width + j];
                     });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no parts");
  const std::size_t m = parts[0].rows();
  std::vector<std::size_t> widths;
  std::size_t n = 0;
  for (const auto& p : parts) {
    require_matrix(p, "concat_cols");
    if (p.dim(0) != m) throw ShapeError("concat_cols: row counts differ");
    widths.push_back(p.dim(1));
    n += p.dim(1);
  }
  std::vector<double> out(m * n);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto v = parts[k].data();
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(v.begin() + i * widths[k], widths[k],
                  out.begin() + i * n + off);
    off += widths[k];
  }
  return make_result("concat_cols", {m, n}, std::move(out),
                     std::vector<Tensor>(parts.begin(), parts.end()),
                     [m, n, widths](Node& self) {
                       std::size_t off = 0;
                       for (std::size_t k = 0; k < widths.size(); ++k) {
                         if (double* g = parent_grad(self, k))
                           for (std::size_t i = 0; i < m; ++i)
                             for (std::size_t j = 0; j < widths[k]; ++j)
                               g[i * widths[k] + j] +=
                                   self.grad[i * n + off + j];
                         off += widths[k];
                       }
                     });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no parts");
  const std::size_t n = parts[0].cols();
  std::size_t m = 0;
  std::vector<double> out;
  std::vector<std::size_t> sizes;
  for (const auto& p : parts) {
    require_matrix(p, "concat_rows");
    if (p.dim(1) != n) throw ShapeError("concat_rows: column counts differ");
    m += p.dim(0);
    sizes.push_back(p.numel());
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  return make_result("concat_rows", {m, n}, std::move(out),
                     std::vector<Tensor>(parts.begin(), parts.end()),
                     [sizes](Node& self) {
                       std::size_t off = 0;
                       for (std::size_t k = 0; k < sizes.size(); ++k) {
                         if (double* g = parent_grad(self, k))
                           for (std::size_t i = 0; i < sizes[k]; ++i)
                             g[i] += self.grad[off + i];
                         off += sizes[k];
                       }
                     });
}

Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t count) {
  require_matrix(x, "slice_rows");
  const std::size_t n = x.dim(1);
  if (start + count > x.dim(0)) throw ShapeError("slice_rows: out of bounds");
  std::vector<double> out(x.data().begin() + start * n,
                          x.data().begin() + (start + count) * n);
  return make_result("slice_rows", {count, n}, std::move(out), {x},
                     [start, n](Node& self) {
                       double* g = parent_grad(self, 0) + start * n;
                       for (std::size_t i = 0; i < self.grad.size(); ++i)
                         g[i] += self.grad[i];
                     });
}

Tensor unfold_rows(const Tensor& x, std::size_t kernel, std::size_t left_pad) {
  require_matrix(x, "unfold_rows");
  if (kernel == 0 || left_pad >= kernel)
    throw ParameterError("unfold_rows: need kernel >= 1 and left_pad < kernel");
  const std::size_t len = x.dim(0), d = x.dim(1), w = kernel * d;
  std::vector<double> out(len * w, 0.0);
  auto in = x.data();
  for (std::size_t i = 0; i < len; ++i)
    for (std::size_t k = 0; k < kernel; ++k) {
      const long src = static_cast<long>(i + k) - static_cast<long>(left_pad);
      if (src < 0 || src >= static_cast<long>(len)) continue;
      std::copy_n(in.begin() + src * d, d, out.begin() + i * w + k * d);
    }
  return make_result(
      "unfold_rows", {len, w}, std::move(out), {x},
      [len, d, w, kernel, left_pad](Node& self) {
        double* g = parent_grad(self, 0);
        for (std::size_t i = 0; i < len; ++i)
          for (std::size_t k = 0; k < kernel; ++k) {
            const long src =
                static_cast<long>(i + k) - static_cast<long>(left_pad);
            if (src < 0 || src >= static_cast<long>(len)) continue;
            for (std::size_t j = 0; j < d; ++j)
              g[src * d + j] += self.grad[i * w + k * d + j];
          }
      });
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  return make_result("sum", {}, {acc}, {x}, [](Node& self) {
    double* g = parent_grad(self, 0);
    const std::size_t n = self.parents[0]->value.size();
    for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor weighted_sum(const Tensor& x, std::span<const double> weights) {
  if (weights.size() != x.numel())
    throw ShapeError("weighted_sum: weight pattern size mismatch");
  double acc = 0.0;
  auto v = x.data();
  for (std::size_t i = 0; i < v.size(); ++i) acc += v[i] * weights[i];
  std::vector<double> w(weights.begin(), weights.end());
  return make_result("weighted_sum", {}, {acc}, {x},
                     [w = std::move(w)](Node& self) {
                       double* g = parent_grad(self, 0);
                       for (std::size_t i = 0; i < w.size(); ++i)
                         g[i] += self.grad[0] * w[i];
                     });
}

Tensor mean_abs_error(const Tensor& pred, const Tensor& target) {
  require_same_shape(pred, target, "mean_abs_error");
  const std::size_t n = pred.numel();
  if (n == 0) throw ShapeError("mean_abs_error of empty tensors");
  double acc = 0.0;
  auto p = pred.data();
  auto t = target.data();
  for (std::size_t i = 0; i < n; ++i) acc += std::abs(p[i] - t[i]);
  return make_result(
      "mean_abs_error", {}, {acc / static_cast<double>(n)}, {pred, target},
      [n](Node& self) {
        const auto& p = parent_value(self, 0);
        const auto& t = parent_value(self, 1);
        const double s = self.grad[0] / static_cast<double>(n);
        double* gp = parent_grad(self, 0);
        double* gt = parent_grad(self, 1);
        for (std::size_t i = 0; i < n; ++i) {
          const double d = p[i] - t[i];
          const double sg = d > 0.0 ? s : (d < 0.0 ? -s : 0.0);
          if (gp) gp[i] += sg;
          if (gt) gt[i] -= sg;
        }
      });
}

Tensor mean_squared_error(const Tensor& pred, const Tensor& target) {
  require_same_shape(pred, target, "mean_squared_error");
  const std::size_t n = pred.numel();
  if (n == 0) throw ShapeError("mean_squared_error of empty tensors");
  double acc = 0.0;
  auto p = pred.data();
  auto t = target.data();
  for (std::size_t i = 0; i < n; ++i) acc += (p[i] - t[i]) * (p[i] - t[i]);
  return make_result(
      "mean_squared_error", {}, {acc / static_cast<double>(n)}, {pred, target},
      [n](Node& self) {
        const auto& p = parent_value(self, 0);
        const auto& t = parent_value(self, 1);
        const double s = 2.0 * self.grad[0] / static_cast<double>(n);
        double* gp = parent_grad(self, 0);
        double* gt = parent_grad(self, 1);
        for (std::size_t i = 0; i < n; ++i) {
          if (gp) gp[i] += s * (p[i] - t[i]);
          if (gt) gt[i] -= s * (p[i] - t[i]);
        }
      });
}

Tensor bce_with_logits(const Tensor& logits, std::span<const double> targets,
                       double pos_weight) {
  const std::size_t n = logits.numel();
  if (targets.size() != n || n == 0)
    throw ShapeError("bce_with_logits: target count mismatch");
  auto z = logits.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    // log(1 + e^-z) and log(1 + e^z) in overflow-safe form.
    const double sp_neg = std::log1p(std::exp(-std::abs(z[i]))) +
                          std::max(-z[i], 0.0);
    const double sp_pos = sp_neg + z[i];
    acc += pos_weight * targets[i] * sp_neg + (1.0 - targets[i]) * sp_pos;
  }
  std::vector<double> tv(targets.begin(), targets.end());
  return make_result(
      "bce_with_logits", {}, {acc / static_cast<double>(n)}, {logits},
      [tv = std::move(tv), pos_weight, n](Node& self) {
        const auto& z = parent_value(self, 0);
        double* g = parent_grad(self, 0);
        const double s = self.grad[0] / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
          const double sig = 1.0 / (1.0 + std::exp(-z[i]));
          // d/dz [w*y*softplus(-z) + (1-y)*softplus(z)]
          g[i] += s * (-pos_weight * tv[i] * (1.0 - sig) + (1.0 - tv[i]) * sig);
        }
      });
}

}  // namespace atlab
