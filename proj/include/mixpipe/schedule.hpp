// Copyright 2026 The mixpipe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>

namespace mixpipe {

enum class ScheduleShape { cosine, linear_warmup_cosine };

std::string to_string(ScheduleShape shape);
ScheduleShape parse_schedule_shape(const std::string& text);

// Pre-training recipe at full scale: 180k steps, 2k-step linear warm-up
// from 0 to 5e-5, cosine down to 5e-6.
struct ScheduleConfig {
  double peak_lr = 5e-5;
  double final_lr = 5e-6;
  std::int64_t warmup_steps = 2000;
  std::int64_t total_steps = 180000;
  ScheduleShape shape = ScheduleShape::linear_warmup_cosine;

  // Throws std::invalid_argument describing the first violated constraint.
  void validate() const;
};

// Linear warm-up peak*step/warmup, then half-cosine from peak to final over
// the remaining steps. The plain cosine shape has no warm-up.
double lr_at_step(std::int64_t step, const ScheduleConfig& cfg);

}  // namespace mixpipe
