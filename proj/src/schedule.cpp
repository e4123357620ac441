// Copyright 2026 The mixpipe Authors
// SPDX-License-Identifier: Apache-2.0

#include "mixpipe/schedule.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace mixpipe {

std::string to_string(ScheduleShape shape) {
  return shape == ScheduleShape::cosine ? "cosine" : "linear-warmup-cosine";
}

ScheduleShape parse_schedule_shape(const std::string& text) {
  if (text == "cosine") return ScheduleShape::cosine;
  if (text == "linear-warmup-cosine") return ScheduleShape::linear_warmup_cosine;
  throw std::invalid_argument("unknown schedule shape '" + text + "'");
}

void ScheduleConfig::validate() const {
  if (!(peak_lr > 0.0)) throw std::invalid_argument("schedule: peak_lr must be positive");
  if (!(final_lr >= 0.0) || final_lr > peak_lr)
    throw std::invalid_argument("schedule: final_lr must lie in [0, peak_lr]");
  if (warmup_steps < 0) throw std::invalid_argument("schedule: warmup_steps must be non-negative");
  if (total_steps <= 0) throw std::invalid_argument("schedule: total_steps must be positive");
  if (total_steps <= warmup_steps)
    throw std::invalid_argument("schedule: total_steps must exceed warmup_steps");
  if (shape == ScheduleShape::cosine && warmup_steps != 0)
    throw std::invalid_argument("schedule: the plain cosine shape takes no warm-up");
}

double lr_at_step(std::int64_t step, const ScheduleConfig& cfg) {
  cfg.validate();
  if (step < 0 || step > cfg.total_steps)
    throw std::out_of_range("lr_at_step: step " + std::to_string(step) + " outside [0, " +
                            std::to_string(cfg.total_steps) + "]");
  if (cfg.warmup_steps > 0 && step <= cfg.warmup_steps)
    return cfg.peak_lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  const double progress = static_cast<double>(step - cfg.warmup_steps) /
                          static_cast<double>(cfg.total_steps - cfg.warmup_steps);
  return cfg.final_lr +
         0.5 * (cfg.peak_lr - cfg.final_lr) * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace mixpipe
