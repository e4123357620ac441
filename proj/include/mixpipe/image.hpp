// Copyright 2026 The mixpipe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <vector>

#include "mixpipe/tensor.hpp"

namespace mixpipe {

// RGB image, channel-last row-major, values in [0, 1].
struct ImageTensor {
  int height = 0;
  int width = 0;
  std::vector<double> data;

  static constexpr int kChannels = 3;

  ImageTensor() = default;
  ImageTensor(int h, int w, double fill = 0.0);

  double& at(int y, int x, int c) { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  double at(int y, int x, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  bool square() const { return height == width; }

  // Throws std::invalid_argument on size mismatch or values outside [0, 1].
  void validate() const;

  // [h*w, 3] tensor view of the pixels (copied), no gradient.
  Tensor to_tensor() const;

  bool operator==(const ImageTensor&) const = default;
};

// Binary P6 pixmap, maxval 255. Reading accepts comments in the header.
ImageTensor read_ppm(const std::filesystem::path& path);
void write_ppm(const ImageTensor& img, const std::filesystem::path& path);

}  // namespace mixpipe
