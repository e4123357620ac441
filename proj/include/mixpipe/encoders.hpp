// Copyright 2026 The mixpipe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Toy visual encoders with different inductive biases: a patch transformer
// (global interactions), a strided convolution stack (local neighbourhoods)
// and a query former that pools another encoder's tokens into a fixed number
// of learned-query outputs. Weights are seeded normal(0, 0.02) and frozen by
// default; they serialise under the reserved "encoder." key prefix.

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mixpipe/image.hpp"
#include "mixpipe/tensor.hpp"

namespace mixpipe {

inline constexpr const char* kEncoderPrefix = "encoder.";

enum class EncoderKind { patch, conv, query };

std::string to_string(EncoderKind kind);
EncoderKind parse_encoder_kind(const std::string& text);

struct Provenance {
  std::string encoder_id;
  std::string scale_tag;  // "global" or "crop"
  int crop_index = 0;     // 0 for the global view, 1.. for crops

  bool operator==(const Provenance&) const = default;
};

struct TokenSegment {
  std::size_t begin = 0;
  std::size_t end = 0;
  Provenance provenance;

  bool operator==(const TokenSegment&) const = default;
};

// Ordered token vectors [count, dim] with provenance. Mixed groups carry one
// segment per contributing token range.
struct TokenGroup {
  Tensor tokens;
  Provenance provenance;
  std::vector<TokenSegment> segments;

  std::size_t count() const { return tokens.rows(); }
  std::size_t dim() const { return tokens.cols(); }
  void validate() const;
};

TokenGroup make_group(Tensor tokens, Provenance provenance);

struct EncoderConfig {
  std::string id = "vit";
  EncoderKind kind = EncoderKind::patch;
  int input_size = 32;
  int patch_size = 8;                    // patch kind
  std::vector<int> stride_schedule{4, 2};  // conv kind; product is the total stride
  int dim = 16;
  int depth = 1;
  int heads = 2;
  int num_queries = 4;  // query kind
  int input_dim = 16;   // query kind: width of consumed tokens
  bool cls_token = true;
  bool frozen = true;
  std::uint64_t seed = 1;

  void validate() const;
  int grid_side() const;           // patch/conv: tokens per side of the spatial grid
  std::size_t token_count() const;  // tokens emitted per call
};

class Encoder {
 public:
  explicit Encoder(EncoderConfig cfg);

  const EncoderConfig& config() const { return cfg_; }
  const std::string& id() const { return cfg_.id; }

  // Patch and conv kinds. The image must already be input_size square.
  TokenGroup encode(const ImageTensor& img, const std::string& scale_tag = "global",
                    int crop_index = 0) const;
  // Query kind only.
  TokenGroup encode_tokens(const TokenGroup& input) const;

  std::map<std::string, Tensor>& params() { return params_; }
  const std::map<std::string, Tensor>& params() const { return params_; }
  // Leaves frozen encoders untouched unless forced (used by gradient checks).
  void set_requires_grad(bool value);

 private:
  const Tensor& p(const std::string& name) const;
  Tensor add_param(const std::string& name, Shape shape, double stddev);
  Tensor add_const(const std::string& name, Shape shape, double value);
  Tensor transformer_block(const Tensor& x, int layer) const;
  TokenGroup encode_patch(const ImageTensor& img, Provenance prov) const;
  TokenGroup encode_conv(const ImageTensor& img, Provenance prov) const;

  EncoderConfig cfg_;
  std::map<std::string, Tensor> params_;
};

// Encoder input: [h*w, 3] with pixels mapped from [0, 1] to [-1, 1].
Tensor normalized_pixels(const ImageTensor& img);

TokenGroup patch_encode(const ImageTensor& img, const Encoder& encoder);
TokenGroup conv_encode(const ImageTensor& img, const Encoder& encoder);
TokenGroup query_encode(const TokenGroup& patch_tokens, const Encoder& encoder);

}  // namespace mixpipe
