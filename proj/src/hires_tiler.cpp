// Copyright 2026 The mixpipe Authors
// SPDX-License-Identifier: Apache-2.0

#include "mixpipe/hires_tiler.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace mixpipe {

std::string to_string(ViewKind kind) { return kind == ViewKind::global ? "global" : "crop"; }

int TilingPlan::grid() const {
  const auto crops = static_cast<int>(views.size()) - 1;
  const int k = static_cast<int>(std::lround(std::sqrt(static_cast<double>(crops))));
  return k;
}

void TilingPlan::validate() const {
  if (input_res < base_res || base_res < 1) throw std::invalid_argument("tiling plan has input_res < base_res");
  if (views.empty() || views.front().kind != ViewKind::global)
    throw std::invalid_argument("tiling plan must start with the global view");
  if (tokens_per_group < 1) throw std::invalid_argument("tokens_per_group must be positive");
  for (std::size_t i = 1; i < views.size(); ++i)
    if (views[i].kind != ViewKind::crop) throw std::invalid_argument("tiling plan has more than one global view");
  for (const auto& v : views)
    if (v.resample_to != base_res) throw std::invalid_argument("every view must resample to base_res");
}

TilingPlan make_plan(int input_res, int base_res, int tokens_per_group) {
  if (base_res < 1) throw std::invalid_argument("base_res must be positive");
  if (input_res < base_res)
    throw std::invalid_argument("input_res " + std::to_string(input_res) + " is smaller than base_res " +
                                std::to_string(base_res));
  if (tokens_per_group < 1) throw std::invalid_argument("tokens_per_group must be positive");
  TilingPlan plan{input_res, base_res, {}, tokens_per_group};
  plan.views.push_back({ViewKind::global, {0, 0, input_res, input_res}, base_res});
  const int k = input_res / base_res;
  // A single cell would repeat the global view.
  if (k < 2) return plan;
  // Boundaries floor(i * input / k) partition [0, input) exactly.
  std::vector<int> edge(k + 1);
  for (int i = 0; i <= k; ++i) edge[i] = static_cast<int>(static_cast<long long>(i) * input_res / k);
  for (int r = 0; r < k; ++r)
    for (int c = 0; c < k; ++c)
      plan.views.push_back(
          {ViewKind::crop, {edge[c], edge[r], edge[c + 1] - edge[c], edge[r + 1] - edge[r]}, base_res});
  return plan;
}

TilingPlan make_plan(int input_h, int input_w, int base_res, int tokens_per_group) {
  if (input_h != input_w)
    throw std::invalid_argument("tiling needs a square input, got " + std::to_string(input_h) + "x" +
                                std::to_string(input_w) + "; pad to square first");
  return make_plan(input_h, base_res, tokens_per_group);
}

long long total_visual_tokens(const TilingPlan& plan, int tokens_per_group) {
  if (tokens_per_group < 1) throw std::invalid_argument("tokens_per_group must be positive");
  return static_cast<long long>(plan.views.size()) * tokens_per_group;
}

ImageTensor resample(const ImageTensor& img, int target_h, int target_w) {
  if (target_h < 1 || target_w < 1) throw std::invalid_argument("resample target must be at least 1x1");
  if (img.height < 1 || img.width < 1) throw std::invalid_argument("resample of an empty image");
  if (target_h == img.height && target_w == img.width) return img;
  ImageTensor out(target_h, target_w);
  const double sy = static_cast<double>(img.height) / target_h;
  const double sx = static_cast<double>(img.width) / target_w;
  auto taps = [](double src, int n, int& i0, int& i1, double& t) {
    src = std::clamp(src, 0.0, static_cast<double>(n - 1));
    i0 = static_cast<int>(std::floor(src));
    i1 = std::min(i0 + 1, n - 1);
    t = src - i0;
  };
  for (int y = 0; y < target_h; ++y) {
    int y0, y1;
    double ty;
    taps((y + 0.5) * sy - 0.5, img.height, y0, y1, ty);
    for (int x = 0; x < target_w; ++x) {
      int x0, x1;
      double tx;
      taps((x + 0.5) * sx - 0.5, img.width, x0, x1, tx);
      for (int c = 0; c < 3; ++c) {
        const double top = img.at(y0, x0, c) * (1.0 - tx) + img.at(y0, x1, c) * tx;
        const double bot = img.at(y1, x0, c) * (1.0 - tx) + img.at(y1, x1, c) * tx;
        out.at(y, x, c) = std::clamp(top * (1.0 - ty) + bot * ty, 0.0, 1.0);
      }
    }
  }
  return out;
}

ImageTensor resample(const ImageTensor& img, int target_res) { return resample(img, target_res, target_res); }

ImageTensor crop(const ImageTensor& img, const Rect& r) {
  if (r.w < 1 || r.h < 1 || r.x < 0 || r.y < 0 || r.x + r.w > img.width || r.y + r.h > img.height)
    throw std::invalid_argument("crop rect (" + std::to_string(r.x) + ", " + std::to_string(r.y) + ", " +
                                std::to_string(r.w) + ", " + std::to_string(r.h) + ") is outside the " +
                                std::to_string(img.height) + "x" + std::to_string(img.width) + " image");
  ImageTensor out(r.h, r.w);
  for (int y = 0; y < r.h; ++y) {
    const double* src = &img.data[(static_cast<std::size_t>(r.y + y) * img.width + r.x) * 3];
    std::copy(src, src + static_cast<std::size_t>(r.w) * 3, &out.data[static_cast<std::size_t>(y) * r.w * 3]);
  }
  return out;
}

std::vector<ImageTensor> apply_plan(const ImageTensor& img, const TilingPlan& plan) {
  plan.validate();
  if (img.height != plan.input_res || img.width != plan.input_res)
    throw std::invalid_argument("apply_plan: image is " + std::to_string(img.height) + "x" +
                                std::to_string(img.width) + ", plan expects " + std::to_string(plan.input_res) +
                                "x" + std::to_string(plan.input_res));
  std::vector<ImageTensor> out;
  out.reserve(plan.views.size());
  for (const auto& v : plan.views) {
    if (v.kind == ViewKind::global)
      out.push_back(resample(img, v.resample_to));
    else
      out.push_back(resample(crop(img, v.source_rect), v.resample_to));
  }
  return out;
}

std::string plan_to_text(const TilingPlan& plan) {
  std::ostringstream os;
  os << "plan " << plan.input_res << ' ' << plan.base_res << ' ' << plan.tokens_per_group << '\n';
  for (std::size_t i = 0; i < plan.views.size(); ++i) {
    const auto& v = plan.views[i];
    os << i << ' ' << to_string(v.kind) << ' ' << v.source_rect.x << ' ' << v.source_rect.y << ' '
       << v.source_rect.w << ' ' << v.source_rect.h << ' ' << v.resample_to << '\n';
  }
  return os.str();
}

TilingPlan plan_from_text(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  TilingPlan plan;
  if (!std::getline(is, line)) throw std::invalid_argument("plan manifest is empty");
  {
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag >> plan.input_res >> plan.base_res >> plan.tokens_per_group) || tag != "plan")
      throw std::invalid_argument("plan manifest line 1: expected 'plan <input> <base> <tokens>'");
  }
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::size_t order;
    std::string kind;
    View v;
    if (!(ls >> order >> kind >> v.source_rect.x >> v.source_rect.y >> v.source_rect.w >> v.source_rect.h >>
          v.resample_to))
      throw std::invalid_argument("plan manifest line " + std::to_string(lineno) + " is malformed");
    if (order != plan.views.size())
      throw std::invalid_argument("plan manifest line " + std::to_string(lineno) + " is out of order");
    if (kind == "global")
      v.kind = ViewKind::global;
    else if (kind == "crop")
      v.kind = ViewKind::crop;
    else
      throw std::invalid_argument("plan manifest line " + std::to_string(lineno) + ": unknown kind " + kind);
    plan.views.push_back(v);
  }
  plan.validate();
  return plan;
}

void write_views(const std::vector<ImageTensor>& views, const TilingPlan& plan, const std::filesystem::path& dir) {
  if (views.size() != plan.views.size()) throw std::invalid_argument("write_views: view count does not match plan");
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < views.size(); ++i) write_ppm(views[i], dir / ("view_" + std::to_string(i) + ".ppm"));
  std::ofstream out(dir / "plan.txt", std::ios::binary);
  out << plan_to_text(plan);
  if (!out) throw std::runtime_error("cannot write " + (dir / "plan.txt").string());
}

}  // namespace mixpipe
