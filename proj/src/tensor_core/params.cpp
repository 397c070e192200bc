#include "atlab/params.hpp"

#include <cmath>

#include "atlab/errors.hpp"

namespace atlab {

Tensor& ParameterStore::add(std::string name, Tensor value) {
  if (contains(name)) throw ParameterError("duplicate parameter " + name);
  index_.emplace(name, entries_.size());
  entries_.push_back({std::move(name), value.detach(true)});
  return entries_.back().value;
}

bool ParameterStore::contains(const std::string& name) const {
  return index_.contains(name);
}

const Tensor& ParameterStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ParameterError("unknown parameter " + name);
  return entries_[it->second].value;
}

Tensor& ParameterStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ParameterError("unknown parameter " + name);
  return entries_[it->second].value;
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.numel();
  return n;
}

ParameterStore ParameterStore::clone(bool requires_grad) const {
  ParameterStore out;
  out.index_ = index_;
  out.entries_.reserve(entries_.size());
  for (const auto& e : entries_)
    out.entries_.push_back({e.name, e.value.detach(requires_grad)});
  return out;
}

void ParameterStore::zero_grad() {
  for (auto& e : entries_) e.value.zero_grad();
}

Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out,
                      std::mt19937_64& rng) {
  const double limit =
      std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  std::vector<double> v(fan_in * fan_out);
  for (auto& x : v) x = dist(rng);
  return Tensor::from({fan_in, fan_out}, std::move(v), true);
}

Tensor normal_init(Shape shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor::from(std::move(shape), std::move(v), true);
}

AdamState AdamState::for_params(const ParameterStore& params) {
  AdamState s;
  for (const auto& e : params.entries()) {
    s.first_moment.emplace_back(e.value.numel(), 0.0);
    s.second_moment.emplace_back(e.value.numel(), 0.0);
  }
  return s;
}

void adam_step(ParameterStore& params, AdamState& state, double lr) {
  if (!(lr > 0.0)) throw ParameterError("adam_step: lr must be > 0");
  auto& entries = params.entries();
  if (state.first_moment.size() != entries.size() ||
      state.second_moment.size() != entries.size())
    throw ShapeError("adam_step: optimizer state does not match parameters");
  for (std::size_t p = 0; p < entries.size(); ++p) {
    if (state.first_moment[p].size() != entries[p].value.numel() ||
        state.second_moment[p].size() != entries[p].value.numel())
      throw ShapeError("adam_step: moment shape mismatch for " +
                       entries[p].name);
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t p = 0; p < entries.size(); ++p) {
    Tensor& param = entries[p].value;
    if (!param.has_grad()) continue;
    auto g = param.grad();
    auto w = param.mutable_data();
    auto& m = state.first_moment[p];
    auto& v = state.second_moment[p];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + state.epsilon);
    }
  }
}

double noam_lr(std::uint64_t step, std::size_t d_model, std::uint64_t warmup) {
  if (step == 0) throw ParameterError("noam_lr: step must be >= 1");
  if (warmup == 0) throw ParameterError("noam_lr: warmup must be >= 1");
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(warmup);
  return std::pow(static_cast<double>(d_model), -0.5) *
         std::min(std::pow(s, -0.5), s * std::pow(w, -1.5));
}

double grad_norm(const ParameterStore& params) {
  double acc = 0.0;
  for (const auto& e : params.entries()) {
    if (!e.value.has_grad()) continue;
    for (double g : e.value.grad()) acc += g * g;
  }
  return std::sqrt(acc);
}

}  // namespace atlab
