#pragma once

// Dense float64 tensors with a dynamic reverse-mode autodiff tape.
//
// A Tensor is a cheap handle to a graph node. Every op that has at least one
// input requiring a gradient records its parents and a backward closure on
// the result; backward() walks the graph reachable from a scalar loss in
// reverse topological order. Nothing is shared between forward passes.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace atlab {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool backpropagated = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<double>& grad_buffer();
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  // Throws ShapeError when the payload size disagrees with the shape and
  // NumericError on non-finite values.
  static Tensor from(Shape shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t i) const;
  std::size_t numel() const;
  // Matrix views; a rank-1 tensor is treated as a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const;
  // Direct write access; only meaningful on leaves (parameters, inputs).
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t i) const { return data()[i]; }
  double at(std::size_t r, std::size_t c) const { return data()[r * cols() + c]; }

  bool requires_grad() const;
  bool has_grad() const;
  // Zero-filled view when no gradient has been accumulated yet.
  std::span<const double> grad() const;
  // Allocates a zeroed buffer on first use.
  std::span<double> mutable_grad();
  void zero_grad();

  // Fresh leaf holding a copy of the values, detached from any graph.
  Tensor detach(bool requires_grad = false) const;

  const char* op_name() const;
  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

// Reverse-mode sweep from a scalar loss. Accumulates into every reachable
// node that requires a gradient. A second call on the same loss throws
// unless reset_backward() was called in between.
void backward(const Tensor& loss);
void reset_backward(const Tensor& loss);

// Builds an op result. If no parent requires a gradient the parents and the
// closure are dropped so inference does not retain the graph.
Tensor make_result(const char* op, Shape shape, std::vector<double> value,
                   std::vector<Tensor> parents,
                   std::function<void(detail::Node&)> backward_fn);

// Throws NumericError naming `what` if any value is NaN/Inf.
void check_finite(std::span<const double> values, const std::string& what);

}  // namespace atlab
