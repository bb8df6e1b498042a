#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "delta/common.hpp"

namespace delta {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

struct TensorNode {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // allocated on demand during backward
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  // Accumulates d(output)/d(parent) into each parent's grad, reading this
  // node's grad. Only set on nodes with requires_grad.
  std::function<void(TensorNode&)> backward_fn;
  const char* op_name = "leaf";

  int64_t numel() const { return static_cast<int64_t>(value.size()); }
  std::vector<double>& grad_buf() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

/// Dense tensor of 64-bit floats with reverse-mode differentiation.
/// Ops build a graph of shared nodes; backward() from a scalar fills the
/// grad of every requires_grad leaf reachable from it.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double v);
  static Tensor scalar(double v) { return full({1}, v); }
  static Tensor from_data(Shape shape, std::vector<double> data);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int64_t numel() const { return node_->numel(); }
  int64_t dim(int i) const;

  std::span<const double> data() const { return node_->value; }
  /// Raw write access; only meaningful on leaves before the tensor is used.
  std::span<double> raw() { return node_->value; }
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool b);

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const;
  void zero_grad() {
    if (!node_->grad.empty()) node_->grad.assign(node_->value.size(), 0.0);
  }

  /// Reverse pass from a scalar tensor.
  void backward() const;

  std::shared_ptr<TensorNode>& node() { return node_; }
  const std::shared_ptr<TensorNode>& node() const { return node_; }

  static Tensor wrap(std::shared_ptr<TensorNode> n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }

 private:
  std::shared_ptr<TensorNode> node_;
};

/// Builds the output node of an op. The backward_fn is attached only when
/// some input carries grad and grad mode is on; otherwise the node is a
/// plain value.
Tensor make_op_node(const char* op_name, Shape shape, std::vector<double> value,
                    std::vector<std::shared_ptr<TensorNode>> parents,
                    std::function<void(TensorNode&)> backward_fn);

bool grad_enabled();

/// Disables graph construction in the current scope (inference).
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();

 private:
  bool prev_;
};

}  // namespace delta
