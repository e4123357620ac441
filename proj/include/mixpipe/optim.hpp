// Copyright 2026 The mixpipe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mixpipe/tensor.hpp"

namespace mixpipe {

struct AdamwHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.1;
};

struct OptimState {
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  std::uint64_t step_count = 0;
};

// One decoupled-weight-decay Adam step on a flat parameter array. Moments are
// sized on first use. Throws NumericError (before touching anything) if a
// gradient is not finite.
void adamw_step(std::span<double> params, std::span<const double> grads, OptimState& state,
                const AdamwHyper& hyper);

// Named-parameter wrapper: one OptimState per tensor, keyed by name.
class AdamW {
 public:
  explicit AdamW(AdamwHyper hyper) : hyper_(hyper) {}

  void set_lr(double lr) { hyper_.lr = lr; }
  const AdamwHyper& hyper() const { return hyper_; }

  void step(const std::map<std::string, Tensor>& params);

  const std::map<std::string, OptimState>& states() const { return states_; }

 private:
  AdamwHyper hyper_;
  std::map<std::string, OptimState> states_;
};

}  // namespace mixpipe
