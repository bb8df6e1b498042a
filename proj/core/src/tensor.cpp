#include "delta/tensor.hpp"

#include <algorithm>
#include <unordered_set>

namespace delta {

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

Tensor Tensor::zeros(Shape shape) {
  auto n = std::make_shared<TensorNode>();
  n->value.assign(shape_numel(shape), 0.0);
  n->shape = std::move(shape);
  return wrap(std::move(n));
}

Tensor Tensor::full(Shape shape, double v) {
  Tensor t = zeros(std::move(shape));
  std::fill(t.node()->value.begin(), t.node()->value.end(), v);
  return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data) {
  check(shape_numel(shape) == static_cast<int64_t>(data.size()),
        "Tensor::from_data: shape ", shape_str(shape), " wants ",
        shape_numel(shape), " values, got ", data.size());
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->value = std::move(data);
  return wrap(std::move(n));
}

int64_t Tensor::dim(int i) const {
  check(i >= 0 && i < static_cast<int>(node_->shape.size()),
        "Tensor::dim: index ", i, " out of range for shape ",
        shape_str(node_->shape));
  return node_->shape[i];
}

double Tensor::item() const {
  check(numel() == 1, "Tensor::item: tensor has ", numel(), " elements");
  return node_->value[0];
}

Tensor& Tensor::set_requires_grad(bool b) {
  check(!b || node_->parents.empty(),
        "set_requires_grad: only leaf tensors can be marked trainable");
  node_->requires_grad = b;
  return *this;
}

std::span<const double> Tensor::grad() const {
  check(!node_->grad.empty(), "Tensor::grad: no gradient computed");
  return node_->grad;
}

void Tensor::backward() const {
  check(numel() == 1, "backward: root must be scalar, got shape ",
        shape_str(shape()));
  check(node_->requires_grad,
        "backward: root does not depend on any trainable tensor");

  // Iterative post-order DFS over parents.
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> visited;
  struct Frame {
    TensorNode* n;
    size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({node_.get(), 0});
  visited.insert(node_.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.n->parents.size()) {
      TensorNode* p = f.n->parents[f.next_parent++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.n);
      stack.pop_back();
    }
  }

  node_->grad_buf()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* n = *it;
    if (n->backward_fn) n->backward_fn(*n);
  }
}

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

Tensor make_op_node(const char* op_name, Shape shape, std::vector<double> value,
                    std::vector<std::shared_ptr<TensorNode>> parents,
                    std::function<void(TensorNode&)> backward_fn) {
  check(shape_numel(shape) == static_cast<int64_t>(value.size()), op_name,
        ": result shape ", shape_str(shape), " inconsistent with buffer size ",
        value.size());
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->op_name = op_name;
  bool needs_grad = false;
  if (g_grad_enabled)
    for (const auto& p : parents) needs_grad = needs_grad || p->requires_grad;
  if (needs_grad) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backward_fn = std::move(backward_fn);
  }
  return Tensor::wrap(std::move(n));
}

}  // namespace delta
