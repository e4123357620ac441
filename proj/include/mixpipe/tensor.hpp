// Copyright 2026 The mixpipe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Reference-counted n-d tensor with a reverse-mode tape. Storage is always
// 64-bit; the graph is recorded implicitly by the ops in ops.hpp whenever
// gradient recording is enabled and an input requires grad.

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mixpipe {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Raised whenever a value stops being finite, or a finite precondition fails.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool graph_consumed = false;
  std::string op;  // producing op, "leaf" for user-created tensors
  std::vector<std::shared_ptr<TensorImpl>> parents;
  std::function<void(TensorImpl& self)> backward_fn;

  std::vector<double>& ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor from_impl(std::shared_ptr<detail::TensorImpl> impl);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;
  std::size_t rows() const;  // rank-2 only
  std::size_t cols() const;  // rank-2 only

  std::span<double> data();
  std::span<const double> data() const;
  // Empty span when no gradient has been accumulated and the tensor is not
  // a grad-requiring leaf.
  std::span<double> grad();
  std::span<const double> grad() const;

  bool requires_grad() const;
  // Leaves only; the tensor gets a zeroed grad buffer when enabled.
  void set_requires_grad(bool value);
  bool is_leaf() const;

  double item() const;
  double at(std::size_t i, std::size_t j) const;

  void zero_grad();
  // Deep copy of values; the copy is a fresh leaf without grad.
  Tensor detach() const;

  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  detail::TensorImpl& checked() const;
  std::shared_ptr<detail::TensorImpl> impl_;
};

// Fills grad buffers of every grad-requiring tensor reachable from `loss`.
// Gradients accumulate; the graph is released afterwards, so a second call on
// the same loss throws GraphError.
void backward(const Tensor& loss);

// Explicit accumulation reset. Nothing else clears gradients.
void zero_grads(std::span<Tensor> params);

bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace mixpipe
