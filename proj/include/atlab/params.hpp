#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "atlab/tensor.hpp"

namespace atlab {

// Named trainable leaves in registration order. Order is part of the
// checkpoint format and of the optimizer state layout.
class ParameterStore {
 public:
  struct Entry {
    std::string name;
    Tensor value;
  };

  Tensor& add(std::string name, Tensor value);
  bool contains(const std::string& name) const;
  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);

  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;
  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }

  // Same names and shapes; every tensor is a fresh leaf with copied values
  // and its own gradient buffer, so a forward pass on the copy can run on
  // another thread without touching this store.
  ParameterStore clone(bool requires_grad = true) const;
  void zero_grad();

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Weight-matrix init: uniform in [-limit, limit], limit = sqrt(6/(fan_in+fan_out)).
Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out,
                      std::mt19937_64& rng);
Tensor normal_init(Shape shape, double stddev, std::mt19937_64& rng);

struct AdamState {
  std::uint64_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double epsilon = 1e-9;

  static AdamState for_params(const ParameterStore& params);
};

// One bias-corrected Adam update using the gradients stored on the
// parameters (absent gradient counts as zero).
void adam_step(ParameterStore& params, AdamState& state, double lr);

// d_model^-0.5 * min(step^-0.5, step * warmup^-1.5)
double noam_lr(std::uint64_t step, std::size_t d_model, std::uint64_t warmup);

// Global L2 norm over all parameter gradients.
double grad_norm(const ParameterStore& params);

}  // namespace atlab
