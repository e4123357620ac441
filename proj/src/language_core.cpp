// Copyright 2026 The mixpipe Authors
// SPDX-License-Identifier: Apache-2.0

#include "mixpipe/language_core.hpp"

#include <algorithm>
#include <stdexcept>

#include "mixpipe/ops.hpp"
#include "mixpipe/random.hpp"

namespace mixpipe {

void LMConfig::validate() const {
  if (vocab_size < 3 || dim <= 0 || depth < 0 || heads <= 0 || max_seq_len <= 0)
    throw std::invalid_argument("LM config has a non-positive size");
  if (dim % heads != 0)
    throw std::invalid_argument("LM dim " + std::to_string(dim) + " is not divisible by heads " +
                                std::to_string(heads));
  for (int t : {pad_token, bos_token, eos_token})
    if (t < 0 || t >= vocab_size) throw std::invalid_argument("special token id outside the vocabulary");
}

void MixedSequence::validate() const {
  if (loss_mask.size() != text_ids.size())
    throw std::invalid_argument("loss_mask has " + std::to_string(loss_mask.size()) + " entries for " +
                                std::to_string(text_ids.size()) + " text tokens");
  if (text_ids.empty()) throw std::invalid_argument("mixed sequence has no text tokens");
  if (loss_mask[0]) throw std::invalid_argument("the first text token cannot be a target");
  if (visual_embeds.defined() && visual_embeds.rank() != 2)
    throw ShapeError("visual embeddings must be [count, dim], got " + shape_str(visual_embeds.shape()));
}

LanguageModel::LanguageModel(LMConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  const auto d = static_cast<std::size_t>(cfg_.dim);
  const auto v = static_cast<std::size_t>(cfg_.vocab_size);
  auto normal = [&](const std::string& name, Shape shape) {
    Rng rng(mix_seed(cfg_.seed, hash_string(name)));
    std::vector<double> values(shape_numel(shape));
    for (auto& x : values) x = rng.normal(0.0, 0.02);
    params_.emplace(kLmPrefix + name, Tensor(std::move(shape), std::move(values), true));
  };
  auto constant = [&](const std::string& name, Shape shape, double value) {
    params_.emplace(kLmPrefix + name, Tensor(shape, std::vector<double>(shape_numel(shape), value), true));
  };
  normal("tok_embed", {v, d});
  normal("pos_embed", {static_cast<std::size_t>(cfg_.max_seq_len), d});
  for (int l = 0; l < cfg_.depth; ++l) {
    const std::string b = "block" + std::to_string(l) + ".";
    constant(b + "ln1.gamma", {d}, 1.0);
    constant(b + "ln1.beta", {d}, 0.0);
    for (const char* w : {"wq", "wk", "wv", "wo"}) {
      normal(b + w + ".weight", {d, d});
      if (std::string(w) != "wk") constant(b + w + ".bias", {d}, 0.0);
    }
    constant(b + "ln2.gamma", {d}, 1.0);
    constant(b + "ln2.beta", {d}, 0.0);
    normal(b + "mlp1.weight", {d, 4 * d});
    constant(b + "mlp1.bias", {4 * d}, 0.0);
    normal(b + "mlp2.weight", {4 * d, d});
    constant(b + "mlp2.bias", {d}, 0.0);
  }
  constant("ln_f.gamma", {d}, 1.0);
  constant("ln_f.beta", {d}, 0.0);
  normal("head.weight", {d, v});
}

const Tensor& LanguageModel::p(const std::string& name) const {
  auto it = params_.find(kLmPrefix + name);
  if (it == params_.end()) throw std::logic_error("language model has no parameter " + name);
  return it->second;
}

Tensor LanguageModel::hidden(const MixedSequence& seq) const {
  seq.validate();
  const std::size_t nv = seq.visual_count();
  const std::size_t n = seq.length();
  if (n > static_cast<std::size_t>(cfg_.max_seq_len))
    throw std::invalid_argument("sequence of " + std::to_string(n) + " tokens (" + std::to_string(nv) +
                                " visual) exceeds max_seq_len " + std::to_string(cfg_.max_seq_len));
  if (nv && seq.visual_embeds.cols() != static_cast<std::size_t>(cfg_.dim))
    throw ShapeError("visual embeddings have width " + std::to_string(seq.visual_embeds.cols()) +
                     ", LM dim is " + std::to_string(cfg_.dim));
  Tensor x = ops::embedding(p("tok_embed"), seq.text_ids);
  if (nv) {
    const Tensor parts[] = {seq.visual_embeds, x};
    x = ops::concat_rows(parts);
  }
  x = ops::add(x, ops::slice_rows(p("pos_embed"), 0, n));
  const auto heads = static_cast<std::size_t>(cfg_.heads);
  for (int l = 0; l < cfg_.depth; ++l) {
    const std::string b = "block" + std::to_string(l) + ".";
    const Tensor h = ops::layer_norm(x, p(b + "ln1.gamma"), p(b + "ln1.beta"));
    const Tensor a = ops::attention(ops::linear(h, p(b + "wq.weight"), p(b + "wq.bias")),
                                    ops::linear(h, p(b + "wk.weight"), Tensor()),
                                    ops::linear(h, p(b + "wv.weight"), p(b + "wv.bias")), heads, true);
    x = ops::add(x, ops::linear(a, p(b + "wo.weight"), p(b + "wo.bias")));
    const Tensor h2 = ops::layer_norm(x, p(b + "ln2.gamma"), p(b + "ln2.beta"));
    x = ops::add(x, ops::linear(ops::gelu(ops::linear(h2, p(b + "mlp1.weight"), p(b + "mlp1.bias"))),
                                p(b + "mlp2.weight"), p(b + "mlp2.bias")));
  }
  if (nv) x = ops::slice_rows(x, nv, n);
  return ops::layer_norm(x, p("ln_f.gamma"), p("ln_f.beta"));
}

Tensor LanguageModel::forward(const MixedSequence& seq) const {
  return ops::linear(hidden(seq), p("head.weight"), Tensor());
}

std::vector<std::int64_t> LanguageModel::targets(const MixedSequence& seq) {
  std::vector<std::int64_t> t(seq.text_ids.size(), ops::kIgnoreIndex);
  for (std::size_t i = 0; i + 1 < seq.text_ids.size(); ++i)
    if (seq.loss_mask[i + 1]) t[i] = seq.text_ids[i + 1];
  return t;
}

Tensor LanguageModel::loss(const MixedSequence& seq) const {
  const auto t = targets(seq);
  if (std::all_of(t.begin(), t.end(), [](auto v) { return v == ops::kIgnoreIndex; }))
    throw std::invalid_argument("loss mask selects no targets; the loss would be empty");
  return ops::cross_entropy(forward(seq), t);
}

Tensor LanguageModel::batch_loss(const std::vector<MixedSequence>& batch) const {
  if (batch.empty()) throw std::invalid_argument("batch_loss of an empty batch");
  if (batch.size() == 1) return loss(batch.front());
  std::vector<Tensor> logits;
  std::vector<std::int64_t> all;
  for (const auto& seq : batch) {
    logits.push_back(forward(seq));
    const auto t = targets(seq);
    all.insert(all.end(), t.begin(), t.end());
  }
  return ops::cross_entropy(ops::concat_rows(logits), all);
}

std::vector<std::int64_t> LanguageModel::generate(const MixedSequence& prefix, int max_new) const {
  if (max_new < 0) throw std::invalid_argument("max_new must be non-negative");
  NoGradGuard guard;
  MixedSequence seq{prefix.visual_embeds, prefix.text_ids, std::vector<std::uint8_t>(prefix.text_ids.size(), 0)};
  std::vector<std::int64_t> out;
  for (int i = 0; i < max_new; ++i) {
    if (seq.length() >= static_cast<std::size_t>(cfg_.max_seq_len)) break;
    const Tensor h = hidden(seq);
    const Tensor last = ops::slice_rows(h, h.rows() - 1, h.rows());
    const Tensor logits = ops::linear(last, p("head.weight"), Tensor());
    const auto row = logits.data();
    const auto next = static_cast<std::int64_t>(std::max_element(row.begin(), row.end()) - row.begin());
    if (next == cfg_.eos_token) break;
    out.push_back(next);
    seq.text_ids.push_back(next);
    seq.loss_mask.push_back(0);
  }
  return out;
}

std::vector<std::int64_t> encode_text(const std::string& text) {
  std::vector<std::int64_t> ids;
  ids.reserve(text.size());
  for (unsigned char c : text) {
    if (c < 3) throw std::invalid_argument("text contains reserved byte " + std::to_string(c));
    ids.push_back(c);
  }
  return ids;
}

std::string decode_text(const std::vector<std::int64_t>& ids) {
  std::string s;
  for (auto id : ids)
    if (id >= 3 && id < 256) s.push_back(static_cast<char>(id));
  return s;
}

}  // namespace mixpipe
