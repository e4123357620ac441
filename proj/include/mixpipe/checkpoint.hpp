// Copyright 2026 The mixpipe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Named tensor maps with stage metadata, their binary file format (see
// docs/formats.md) and convex weight mixing.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "mixpipe/tensor.hpp"

namespace mixpipe {

enum class StageTag { init, pretrain_real, pretrain_syn, mixed, finetuned };

std::string to_string(StageTag tag);
StageTag parse_stage_tag(const std::string& text);

struct CheckpointMeta {
  StageTag stage_tag = StageTag::init;
  std::string config_digest;
  std::int64_t step = 0;
  // Canonical model configuration so a file can rebuild its own model.
  std::map<std::string, std::string> config;

  bool operator==(const CheckpointMeta&) const = default;
};

struct Checkpoint {
  std::map<std::string, Tensor> entries;
  CheckpointMeta meta;

  void validate() const;
};

// Shape and bit equality of every entry plus equal metadata.
bool bit_equal(const Checkpoint& a, const Checkpoint& b);

class CheckpointError : public std::runtime_error {
 public:
  CheckpointError(const std::string& what, std::uint64_t offset);
  std::uint64_t offset() const { return offset_; }

 private:
  std::uint64_t offset_;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(const std::string& bytes);
void save(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load(const std::filesystem::path& path);

// beta*a + (1-beta)*b per entry; encoder keys must match bit for bit and are
// copied. Exact at the endpoints and symmetric: mix(a, b, beta) equals
// mix(b, a, 1 - beta) bit for bit. At beta 1 (0) the result is a (b)
// verbatim, metadata included; otherwise the meta is a's, tagged mixed,
// with the larger step. Config digests must agree.
Checkpoint mix_weights(const Checkpoint& a, const Checkpoint& b, double beta);

// The per-element rule used by mix_weights.
double mix_value(double a, double b, double beta);

}  // namespace mixpipe
