// Copyright 2026 The mixpipe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Scale/sub-image mixing. A square input becomes one global view (the whole
// image resampled to base resolution) followed by a k x k grid of crops,
// k = floor(input / base), each cell resampled to base resolution; k < 2 keeps
// the global view alone. At input == 2*base this is exactly the four
// base-size corner crops.

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mixpipe/image.hpp"

namespace mixpipe {

enum class ViewKind { global, crop };

std::string to_string(ViewKind kind);

struct Rect {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;

  bool operator==(const Rect&) const = default;
};

struct View {
  ViewKind kind = ViewKind::global;
  Rect source_rect;
  int resample_to = 0;

  bool operator==(const View&) const = default;
};

struct TilingPlan {
  int input_res = 0;
  int base_res = 0;
  std::vector<View> views;  // global first, then crops row-major
  int tokens_per_group = 1;

  int grid() const;  // k; 0 when the plan has only the global view
  void validate() const;
  bool operator==(const TilingPlan&) const = default;
};

TilingPlan make_plan(int input_res, int base_res, int tokens_per_group = 1);
// Rejects non-square inputs with a descriptive error.
TilingPlan make_plan(int input_h, int input_w, int base_res, int tokens_per_group);

// Views in plan order, each base_res square.
std::vector<ImageTensor> apply_plan(const ImageTensor& img, const TilingPlan& plan);

long long total_visual_tokens(const TilingPlan& plan, int tokens_per_group);

// Bilinear, half-pixel centres, edge-clamped taps. Equal sizes copy exactly.
ImageTensor resample(const ImageTensor& img, int target_h, int target_w);
ImageTensor resample(const ImageTensor& img, int target_res);
ImageTensor crop(const ImageTensor& img, const Rect& rect);

// Plan manifest: a header line "plan <input_res> <base_res> <tokens_per_group>"
// then one line per view "<order> <kind> <x> <y> <w> <h> <resample_to>".
std::string plan_to_text(const TilingPlan& plan);
TilingPlan plan_from_text(const std::string& text);

// Writes view_<i>.ppm files and plan.txt into `dir` (created if missing).
void write_views(const std::vector<ImageTensor>& views, const TilingPlan& plan,
                 const std::filesystem::path& dir);

}  // namespace mixpipe
