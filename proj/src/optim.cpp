// Copyright 2026 The mixpipe Authors
// SPDX-License-Identifier: Apache-2.0

#include "mixpipe/optim.hpp"

#include <cmath>

#include "mixpipe/kernels.hpp"

namespace mixpipe {

void adamw_step(std::span<double> params, std::span<const double> grads, OptimState& state,
                const AdamwHyper& hyper) {
  if (grads.size() != params.size())
    throw ShapeError("adamw_step: " + std::to_string(grads.size()) + " grads for " +
                     std::to_string(params.size()) + " parameters");
  if (!(hyper.lr >= 0.0)) throw std::invalid_argument("adamw_step: lr must be non-negative");
  if (state.first_moment.empty() && state.second_moment.empty()) {
    state.first_moment.assign(params.size(), 0.0);
    state.second_moment.assign(params.size(), 0.0);
  }
  if (state.first_moment.size() != params.size() || state.second_moment.size() != params.size())
    throw ShapeError("adamw_step: optimizer moments sized for a different parameter array");
  for (double g : grads)
    if (!std::isfinite(g)) throw NumericError("adamw_step: non-finite gradient");

  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  kernels::AdamwArgs args{hyper.lr,
                          hyper.beta1,
                          hyper.beta2,
                          hyper.eps,
                          hyper.weight_decay,
                          1.0 - std::pow(hyper.beta1, t),
                          1.0 - std::pow(hyper.beta2, t)};
  kernels::active().adamw(args, params.data(), state.first_moment.data(), state.second_moment.data(),
                          grads.data(), params.size());
}

void AdamW::step(const std::map<std::string, Tensor>& params) {
  // Validate every gradient first so a bad tensor leaves all parameters untouched.
  for (const auto& [name, t] : params) {
    if (t.grad().size() != t.numel())
      throw GraphError("AdamW: parameter '" + name + "' has no gradient buffer");
    for (double g : t.grad())
      if (!std::isfinite(g)) throw NumericError("AdamW: non-finite gradient in '" + name + "'");
  }
  for (const auto& [name, t] : params) {
    Tensor handle = t;
    adamw_step(handle.data(), handle.grad(), states_[name], hyper_);
  }
}

}  // namespace mixpipe
