// Copyright 2026 The mixpipe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Decoder-only byte-level language model. Visual embeddings enter as a
// prefix of position-assigned vectors ahead of the text embeddings; learned
// absolute positions are shared by both.

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mixpipe/tensor.hpp"

namespace mixpipe {

inline constexpr const char* kLmPrefix = "lm.";

struct LMConfig {
  int vocab_size = 256;
  int dim = 64;
  int depth = 2;
  int heads = 4;
  int max_seq_len = 512;
  int pad_token = 0;
  int bos_token = 1;
  int eos_token = 2;
  std::uint64_t seed = 7;

  void validate() const;
};

// loss_mask[t] marks text_ids[t] as a target predicted from position t-1.
// Position 0 never carries loss.
struct MixedSequence {
  Tensor visual_embeds;  // [n_visual, dim] or undefined
  std::vector<std::int64_t> text_ids;
  std::vector<std::uint8_t> loss_mask;

  std::size_t visual_count() const { return visual_embeds.defined() ? visual_embeds.rows() : 0; }
  std::size_t length() const { return visual_count() + text_ids.size(); }
  void validate() const;
};

class LanguageModel {
 public:
  explicit LanguageModel(LMConfig cfg);

  const LMConfig& config() const { return cfg_; }

  // Logits [n_text, vocab] for the text positions.
  Tensor forward(const MixedSequence& seq) const;
  // Mean CE over masked targets. Throws if the mask selects nothing.
  Tensor loss(const MixedSequence& seq) const;
  // Token-weighted mean CE over several sequences.
  Tensor batch_loss(const std::vector<MixedSequence>& batch) const;
  // Per-row target ids for forward(seq) rows; kIgnoreIndex where unmasked.
  static std::vector<std::int64_t> targets(const MixedSequence& seq);

  // Greedy decoding; stops at eos (not emitted) or after max_new tokens.
  std::vector<std::int64_t> generate(const MixedSequence& prefix, int max_new) const;

  std::map<std::string, Tensor>& params() { return params_; }
  const std::map<std::string, Tensor>& params() const { return params_; }

 private:
  const Tensor& p(const std::string& name) const;
  Tensor hidden(const MixedSequence& seq) const;

  LMConfig cfg_;
  std::map<std::string, Tensor> params_;
};

// Byte-level tokenizer; bytes 0..2 never occur in text.
std::vector<std::int64_t> encode_text(const std::string& text);
std::string decode_text(const std::vector<std::int64_t>& ids);

}  // namespace mixpipe
