// Copyright 2026 The mixpipe Authors
// SPDX-License-Identifier: Apache-2.0

#include "mixpipe/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace mixpipe {
namespace {

double finite_value(const Tensor& out) {
  if (out.numel() != 1) throw ShapeError("grad_check: function must return a scalar, got " + shape_str(out.shape()));
  const double v = out.item();
  if (!std::isfinite(v)) throw NumericError("grad_check: function returned a non-finite value");
  return v;
}

}  // namespace

double grad_check(const std::function<Tensor()>& f, std::span<Tensor> params, double eps) {
  if (!(eps > 0.0 && eps <= 1e-2)) throw std::invalid_argument("grad_check: eps must lie in (0, 1e-2]");
  for (auto& p : params) {
    if (!p.requires_grad()) throw GraphError("grad_check: every checked tensor must require grad");
    p.zero_grad();
  }
  Tensor loss = f();
  const double base = finite_value(loss);
  // Below this magnitude the central difference cannot resolve three
  // significant digits: its rounding error is about ulp(f) / eps.
  const double floor = std::max(1e-8, 1e3 * std::numeric_limits<double>::epsilon() * std::abs(base) / eps);
  backward(loss);
  std::vector<std::vector<double>> analytic;
  for (auto& p : params) analytic.emplace_back(p.grad().begin(), p.grad().end());

  NoGradGuard no_grad;
  double worst = 0.0;
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto data = params[t].data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double orig = data[i];
      data[i] = orig + eps;
      const double up = finite_value(f());
      data[i] = orig - eps;
      const double down = finite_value(f());
      data[i] = orig;
      const double fd = (up - down) / (2.0 * eps);
      const double a = analytic[t][i];
      const double denom = std::max({std::abs(a), std::abs(fd), floor});
      worst = std::max(worst, std::abs(a - fd) / denom);
    }
  }
  return worst;
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double eps) {
  if (!x.requires_grad()) x.set_requires_grad(true);
  Tensor params[] = {x};
  return grad_check([&] { return f(x); }, params, eps);
}

}  // namespace mixpipe
