// Copyright 2026 The mixpipe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <span>

#include "mixpipe/tensor.hpp"

namespace mixpipe {

// Max over coordinates of |analytic - central difference| /
// max(|analytic|, |fd|, floor), floor = max(1e-8, 1000 * DBL_EPSILON * |f| / eps),
// the gradient size the difference quotient resolves to three digits. eps
// must lie in (0, 1e-2]. The function is
// re-evaluated with perturbed values in place; originals are restored.
double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double eps);

// Same check over every coordinate of every tensor in `params`; `f` rebuilds
// the loss from the current parameter values.
double grad_check(const std::function<Tensor()>& f, std::span<Tensor> params, double eps);

}  // namespace mixpipe
