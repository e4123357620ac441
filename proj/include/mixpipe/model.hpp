// Copyright 2026 The mixpipe Authors
// SPDX-License-Identifier: Apache-2.0
//
// The full multimodal model: frozen encoders -> per-view mix -> views joined
// in plan order -> language model. Configuration round-trips through a
// canonical key=value form whose FNV-1a hash is the config digest.

#pragma once

#include <map>
#include <memory>
#include <string>
#include <tuple>
#include <vector>

#include "mixpipe/checkpoint.hpp"
#include "mixpipe/encoders.hpp"
#include "mixpipe/hires_tiler.hpp"
#include "mixpipe/language_core.hpp"
#include "mixpipe/visual_mixer.hpp"

namespace mixpipe {

struct ModelConfig {
  std::vector<EncoderConfig> patch_encoders;  // channel-concat order
  EncoderConfig query_encoder;
  std::string query_input;  // id of the patch encoder the query encoder reads
  LMConfig lm;
  int base_res = 32;
  int input_res = 32;  // == base_res: one global view
  std::uint64_t mixer_seed = 3;

  void validate() const;
  std::size_t tokens_per_group() const;
  std::size_t views() const;
  std::size_t visual_tokens() const { return tokens_per_group() * views(); }

  std::map<std::string, std::string> to_map() const;
  static ModelConfig from_map(const std::map<std::string, std::string>& kv);
  std::string digest() const;
};

// Toy geometry: 32 px views, two patch transformers (8 px patches) and a
// strided conv encoder, 17 tokens each, plus 4 queries -> 21 tokens per view.
ModelConfig toy_config();
// Full-size token geometry (224 px views, 14 px patches, 32 queries) with
// tiny widths so counting runs fast.
ModelConfig full_scale_config(int input_res);

// Encoder outputs for one view (frozen, so they can be cached).
struct EncodedView {
  std::vector<TokenGroup> patch;
  TokenGroup query;
};
using EncodedImage = std::vector<EncodedView>;

class MultimodalModel {
 public:
  explicit MultimodalModel(ModelConfig cfg);

  const ModelConfig& config() const { return cfg_; }
  const TilingPlan& plan() const { return plan_; }
  const LanguageModel& lm() const { return lm_; }
  const MixLayout& layout() const { return layout_; }
  const Encoder& encoder(const std::string& id) const;

  // The image is resized to input_res when needed, then tiled; with
  // global_only only the global view is encoded.
  EncodedImage encode(const ImageTensor& img, bool global_only = false) const;
  // Mixed groups of every view joined in plan order.
  TokenGroup mix(const EncodedImage& encoded) const;

  std::map<std::string, Tensor>& params() { return params_; }
  const std::map<std::string, Tensor>& params() const { return params_; }
  // Grad is enabled exactly on keys starting with one of `prefixes`.
  void set_trainable(const std::vector<std::string>& prefixes);

  Checkpoint to_checkpoint(StageTag tag, std::int64_t step) const;
  // Copies values in place. Key set, shapes and config digest must match.
  void load_checkpoint(const Checkpoint& ckpt);
  static MultimodalModel from_checkpoint(const Checkpoint& ckpt);

 private:
  ModelConfig cfg_;
  TilingPlan plan_;
  std::map<std::string, std::unique_ptr<Encoder>> encoders_;
  MixLayout layout_;
  LanguageModel lm_;
  std::map<std::string, Tensor> params_;
};

// Frozen-encoder outputs keyed by model, image address and view mode. Bypassed when
// any encoder parameter requires grad.
class VisualCache {
 public:
  const EncodedImage& get(const MultimodalModel& model, const ImageTensor& img, bool global_only);
  std::size_t size() const { return entries_.size(); }
  void clear() { entries_.clear(); }

 private:
  std::map<std::tuple<const MultimodalModel*, const ImageTensor*, bool>, EncodedImage> entries_;
  EncodedImage scratch_;
};

// Mixed visual tokens for one image, through `cache` when given.
TokenGroup visual_tokens(const MultimodalModel& model, const ImageTensor& img, bool global_only,
                         VisualCache* cache);

}  // namespace mixpipe
