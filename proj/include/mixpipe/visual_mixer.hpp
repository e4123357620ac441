// Copyright 2026 The mixpipe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Embedding mix: aligned patch-level groups are joined along channels,
// projected to the language width, and placed after the projected query
// tokens in one sequence.

#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mixpipe/encoders.hpp"

namespace mixpipe {

inline constexpr const char* kMixerPrefix = "mixer.";

struct MixLayout {
  std::vector<std::string> patch_sources;
  std::string query_source;
  std::size_t lm_dim = 0;
  Tensor patch_proj_weight;  // [sum of patch dims, lm_dim]
  Tensor patch_proj_bias;    // [lm_dim]
  Tensor query_proj_weight;  // [query dim, lm_dim]
  Tensor query_proj_bias;    // [lm_dim]

  std::size_t patch_input_dim() const { return patch_proj_weight.dim(0); }
  std::size_t query_input_dim() const { return query_proj_weight.dim(0); }
  void validate() const;
  // Keys under "mixer."; the tensors are shared, not copied.
  std::map<std::string, Tensor> params() const;
};

// Weights normal(0, 0.02), biases zero.
MixLayout make_layout(std::vector<std::string> patch_sources, std::span<const std::size_t> patch_dims,
                      std::string query_source, std::size_t query_dim, std::size_t lm_dim,
                      std::uint64_t seed);

// Per-position concatenation in the given order. Counts and scale/crop tags
// must agree.
TokenGroup channel_concat(std::span<const TokenGroup> groups);

// x * weight + bias on every token; provenance is kept.
TokenGroup project(const TokenGroup& group, const Tensor& weight, const Tensor& bias);

// Query tokens first, then patch tokens. Both must already have lm_dim width.
TokenGroup assemble_group(const TokenGroup& patch, const TokenGroup& query, const MixLayout& layout);

// channel_concat -> patch projection, query projection -> assemble_group.
// `patch_groups` must follow layout.patch_sources.
TokenGroup mix_group(std::span<const TokenGroup> patch_groups, const TokenGroup& query,
                     const MixLayout& layout);

// Sequence-wise join of several mixed groups (one per view).
TokenGroup concat_groups(std::span<const TokenGroup> groups);

// One line per segment: "begin end encoder_id scale_tag crop_index".
std::string describe_segments(const TokenGroup& group);

}  // namespace mixpipe
