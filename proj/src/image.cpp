// Copyright 2026 The mixpipe Authors
// SPDX-License-Identifier: Apache-2.0

#include "mixpipe/image.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>

namespace mixpipe {

ImageTensor::ImageTensor(int h, int w, double fill) : height(h), width(w) {
  if (h <= 0 || w <= 0) throw std::invalid_argument("image dimensions must be positive");
  data.assign(static_cast<std::size_t>(h) * w * 3, fill);
}

void ImageTensor::validate() const {
  if (height <= 0 || width <= 0) throw std::invalid_argument("image dimensions must be positive");
  if (data.size() != static_cast<std::size_t>(height) * width * 3)
    throw std::invalid_argument("image buffer holds " + std::to_string(data.size()) + " values, expected " +
                                std::to_string(static_cast<std::size_t>(height) * width * 3));
  for (double v : data)
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("image value outside [0, 1]");
}

Tensor ImageTensor::to_tensor() const {
  return Tensor({static_cast<std::size_t>(height) * width, 3}, data);
}

namespace {

std::string next_token(std::istream& in) {
  std::string tok;
  char c;
  while (in.get(c)) {
    if (c == '#') {
      std::string skip;
      std::getline(in, skip);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(c);
  }
  return tok;
}

}  // namespace

ImageTensor read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open pixmap " + path.string());
  if (next_token(in) != "P6") throw std::runtime_error(path.string() + ": not a binary P6 pixmap");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(next_token(in));
    h = std::stoi(next_token(in));
    maxval = std::stoi(next_token(in));
  } catch (const std::exception&) {
    throw std::runtime_error(path.string() + ": malformed pixmap header");
  }
  if (w <= 0 || h <= 0 || maxval != 255)
    throw std::runtime_error(path.string() + ": unsupported pixmap geometry or maxval");
  ImageTensor img(h, w);
  std::string raw(img.data.size(), '\0');
  in.read(raw.data(), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size()))
    throw std::runtime_error(path.string() + ": truncated pixel data");
  for (std::size_t i = 0; i < raw.size(); ++i)
    img.data[i] = static_cast<unsigned char>(raw[i]) / 255.0;
  return img;
}

void write_ppm(const ImageTensor& img, const std::filesystem::path& path) {
  img.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write pixmap " + path.string());
  out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  std::string raw(img.data.size(), '\0');
  for (std::size_t i = 0; i < raw.size(); ++i)
    raw[i] = static_cast<char>(static_cast<unsigned char>(std::lround(img.data[i] * 255.0)));
  out.write(raw.data(), static_cast<std::streamsize>(raw.size()));
  if (!out) throw std::runtime_error("failed writing pixmap " + path.string());
}

}  // namespace mixpipe
