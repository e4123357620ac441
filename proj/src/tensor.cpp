// Copyright 2026 The mixpipe Authors
// SPDX-License-Identifier: Apache-2.0

#include "mixpipe/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace mixpipe {
namespace {

thread_local bool g_grad_enabled = true;

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, bool requires_grad) {
  for (auto d : shape)
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
  impl_ = std::make_shared<detail::TensorImpl>();
  impl_->data.assign(shape_numel(shape), 0.0);
  impl_->shape = std::move(shape);
  impl_->op = "leaf";
  set_requires_grad(requires_grad);
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  for (auto d : shape)
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
  if (values.size() != shape_numel(shape))
    throw ShapeError("tensor of shape " + shape_str(shape) + " needs " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(values.size()));
  for (double v : values)
    if (!std::isfinite(v)) throw NumericError("tensor initialised with a non-finite value");
  impl_ = std::make_shared<detail::TensorImpl>();
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
  impl_->op = "leaf";
  set_requires_grad(requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(Shape{1}, {value}, requires_grad);
}

Tensor Tensor::from_impl(std::shared_ptr<detail::TensorImpl> impl) {
  Tensor t;
  t.impl_ = std::move(impl);
  return t;
}

detail::TensorImpl& Tensor::checked() const {
  if (!impl_) throw GraphError("use of an undefined tensor");
  return *impl_;
}

const Shape& Tensor::shape() const { return checked().shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size())
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(s));
  return s[axis];
}

std::size_t Tensor::numel() const { return checked().data.size(); }

std::size_t Tensor::rows() const {
  if (rank() != 2) throw ShapeError("rows() needs a rank-2 tensor, got " + shape_str(shape()));
  return shape()[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw ShapeError("cols() needs a rank-2 tensor, got " + shape_str(shape()));
  return shape()[1];
}

std::span<double> Tensor::data() { return checked().data; }
std::span<const double> Tensor::data() const { return checked().data; }
std::span<double> Tensor::grad() { return checked().grad; }
std::span<const double> Tensor::grad() const { return checked().grad; }

bool Tensor::requires_grad() const { return checked().requires_grad; }

void Tensor::set_requires_grad(bool value) {
  auto& t = checked();
  if (!is_leaf()) throw GraphError("requires_grad can only be changed on leaf tensors");
  t.requires_grad = value;
  if (value)
    t.ensure_grad();
  else
    t.grad.clear();
}

bool Tensor::is_leaf() const { return checked().op == "leaf"; }

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() needs a single-element tensor, got " + shape_str(shape()));
  return checked().data[0];
}

double Tensor::at(std::size_t i, std::size_t j) const { return checked().data[i * cols() + j]; }

void Tensor::zero_grad() {
  auto& t = checked();
  std::fill(t.grad.begin(), t.grad.end(), 0.0);
}

Tensor Tensor::detach() const {
  const auto& t = checked();
  return Tensor(t.shape, t.data, false);
}

void backward(const Tensor& loss) {
  if (!loss.defined()) throw GraphError("backward on an undefined tensor");
  auto root = loss.impl();
  if (root->data.size() != 1)
    throw ShapeError("backward needs a scalar loss, got shape " + shape_str(root->shape));
  if (root->graph_consumed)
    throw GraphError("backward already ran on this graph; call zero_grads and rebuild the forward pass");
  if (!root->requires_grad) throw GraphError("loss does not depend on any grad-requiring tensor");

  // Iterative post-order DFS gives a topological order.
  std::vector<detail::TensorImpl*> order;
  std::unordered_set<detail::TensorImpl*> visited;
  std::vector<std::pair<detail::TensorImpl*, std::size_t>> stack{{root.get(), 0}};
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::TensorImpl* p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::TensorImpl* node = *it;
    if (node->backward_fn) {
      node->ensure_grad();
      node->backward_fn(*node);
    }
  }
  for (detail::TensorImpl* node : order) {
    if (node->op == "leaf") continue;
    node->backward_fn = nullptr;
    node->parents.clear();
    node->graph_consumed = true;
  }
}

void zero_grads(std::span<Tensor> params) {
  for (auto& p : params) p.zero_grad();
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

}  // namespace mixpipe
