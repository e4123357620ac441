// Copyright 2026 The mixpipe Authors
// SPDX-License-Identifier: Apache-2.0

#include "mixpipe/encoders.hpp"

#include <numeric>
#include <stdexcept>

#include "mixpipe/ops.hpp"
#include "mixpipe/random.hpp"

namespace mixpipe {

std::string to_string(EncoderKind kind) {
  switch (kind) {
    case EncoderKind::patch:
      return "patch";
    case EncoderKind::conv:
      return "conv";
    case EncoderKind::query:
      return "query";
  }
  return "?";
}

EncoderKind parse_encoder_kind(const std::string& text) {
  if (text == "patch") return EncoderKind::patch;
  if (text == "conv") return EncoderKind::conv;
  if (text == "query") return EncoderKind::query;
  throw std::invalid_argument("unknown encoder kind '" + text + "'");
}

void TokenGroup::validate() const {
  if (!tokens.defined() || tokens.rank() != 2) throw std::invalid_argument("token group has no [count, dim] tensor");
  if (provenance.encoder_id.empty() || provenance.scale_tag.empty())
    throw std::invalid_argument("token group provenance is incomplete");
  std::size_t covered = 0;
  for (const auto& s : segments) {
    if (s.begin != covered || s.end <= s.begin) throw std::invalid_argument("token group segments are not contiguous");
    covered = s.end;
  }
  if (covered != count()) throw std::invalid_argument("token group segments do not cover every token");
}

TokenGroup make_group(Tensor tokens, Provenance provenance) {
  TokenGroup g{std::move(tokens), provenance, {}};
  g.segments.push_back({0, g.count(), std::move(provenance)});
  return g;
}

void EncoderConfig::validate() const {
  auto fail = [&](const std::string& msg) { throw std::invalid_argument("encoder '" + id + "': " + msg); };
  if (id.empty()) throw std::invalid_argument("encoder id must not be empty");
  if (dim <= 0 || depth < 0 || heads <= 0) fail("dim/heads must be positive and depth non-negative");
  if (dim % heads != 0) fail("dim must be divisible by heads");
  switch (kind) {
    case EncoderKind::patch:
      if (input_size <= 0 || patch_size <= 0) fail("input_size and patch_size must be positive");
      if (input_size % patch_size != 0)
        fail("input_size " + std::to_string(input_size) + " is not divisible by patch_size " +
             std::to_string(patch_size));
      break;
    case EncoderKind::conv: {
      if (input_size <= 0 || stride_schedule.empty()) fail("conv encoder needs a positive input_size and strides");
      int side = input_size;
      for (int s : stride_schedule) {
        if (s <= 0 || side % s != 0)
          fail("stride schedule does not divide input_size " + std::to_string(input_size));
        side /= s;
      }
      break;
    }
    case EncoderKind::query:
      if (num_queries < 1) fail("num_queries must be at least 1");
      if (input_dim <= 0) fail("input_dim must be positive");
      break;
  }
}

int EncoderConfig::grid_side() const {
  switch (kind) {
    case EncoderKind::patch:
      return input_size / patch_size;
    case EncoderKind::conv:
      return input_size / std::accumulate(stride_schedule.begin(), stride_schedule.end(), 1,
                                          std::multiplies<>());
    case EncoderKind::query:
      break;
  }
  throw std::logic_error("query encoders have no spatial grid");
}

std::size_t EncoderConfig::token_count() const {
  if (kind == EncoderKind::query) return static_cast<std::size_t>(num_queries);
  const auto side = static_cast<std::size_t>(grid_side());
  return side * side + (cls_token ? 1 : 0);
}

Encoder::Encoder(EncoderConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  constexpr double kStd = 0.02;
  const auto d = static_cast<std::size_t>(cfg_.dim);
  switch (cfg_.kind) {
    case EncoderKind::patch: {
      const auto pp = static_cast<std::size_t>(cfg_.patch_size);
      add_param("patch_embed.weight", {pp * pp * 3, d}, kStd);
      add_const("patch_embed.bias", {d}, 0.0);
      if (cfg_.cls_token) add_param("cls", {1, d}, kStd);
      add_param("pos", {cfg_.token_count(), d}, kStd);
      for (int l = 0; l < cfg_.depth; ++l) {
        const std::string b = "block" + std::to_string(l) + ".";
        add_const(b + "ln1.gamma", {d}, 1.0);
        add_const(b + "ln1.beta", {d}, 0.0);
        for (const char* w : {"wq", "wk", "wv", "wo"}) {
          add_param(b + w + ".weight", {d, d}, kStd);
          // A key bias only shifts every logit of a query row; softmax ignores it.
          if (std::string(w) != "wk") add_const(b + w + ".bias", {d}, 0.0);
        }
        add_const(b + "ln2.gamma", {d}, 1.0);
        add_const(b + "ln2.beta", {d}, 0.0);
        add_param(b + "mlp1.weight", {d, 2 * d}, kStd);
        add_const(b + "mlp1.bias", {2 * d}, 0.0);
        add_param(b + "mlp2.weight", {2 * d, d}, kStd);
        add_const(b + "mlp2.bias", {d}, 0.0);
      }
      add_const("ln_f.gamma", {d}, 1.0);
      add_const("ln_f.beta", {d}, 0.0);
      break;
    }
    case EncoderKind::conv: {
      std::size_t in_ch = 3;
      for (std::size_t s = 0; s < cfg_.stride_schedule.size(); ++s) {
        const auto k = static_cast<std::size_t>(cfg_.stride_schedule[s]);
        const std::string b = "stage" + std::to_string(s) + ".";
        add_param(b + "weight", {k * k * in_ch, d}, kStd);
        add_const(b + "bias", {d}, 0.0);
        in_ch = d;
      }
      add_param("dwconv.weight", {9, d}, kStd);
      add_const("ln_f.gamma", {d}, 1.0);
      add_const("ln_f.beta", {d}, 0.0);
      break;
    }
    case EncoderKind::query: {
      const auto in = static_cast<std::size_t>(cfg_.input_dim);
      add_param("queries", {static_cast<std::size_t>(cfg_.num_queries), d}, kStd);
      add_param("wq.weight", {d, d}, kStd);
      add_const("wq.bias", {d}, 0.0);
      add_param("wk.weight", {in, d}, kStd);
      add_param("wv.weight", {in, d}, kStd);
      add_const("wv.bias", {d}, 0.0);
      break;
    }
  }
  set_requires_grad(!cfg_.frozen);
}

Tensor Encoder::add_param(const std::string& name, Shape shape, double stddev) {
  // Each tensor draws from its own stream so adding a parameter does not
  // reshuffle the others.
  Rng rng(mix_seed(cfg_.seed, hash_string(name)));
  std::vector<double> values(shape_numel(shape));
  for (auto& v : values) v = rng.normal(0.0, stddev);
  Tensor t(std::move(shape), std::move(values));
  params_.emplace(std::string(kEncoderPrefix) + cfg_.id + "." + name, t);
  return t;
}

Tensor Encoder::add_const(const std::string& name, Shape shape, double value) {
  Tensor t(shape, std::vector<double>(shape_numel(shape), value));
  params_.emplace(std::string(kEncoderPrefix) + cfg_.id + "." + name, t);
  return t;
}

const Tensor& Encoder::p(const std::string& name) const {
  auto it = params_.find(std::string(kEncoderPrefix) + cfg_.id + "." + name);
  if (it == params_.end()) throw std::logic_error("encoder '" + cfg_.id + "' has no parameter " + name);
  return it->second;
}

void Encoder::set_requires_grad(bool value) {
  for (auto& [_, t] : params_) t.set_requires_grad(value);
}

Tensor normalized_pixels(const ImageTensor& img) {
  std::vector<double> v(img.data.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = 2.0 * img.data[i] - 1.0;
  return Tensor({static_cast<std::size_t>(img.height) * img.width, 3}, std::move(v));
}

Tensor Encoder::transformer_block(const Tensor& x, int layer) const {
  const std::string b = "block" + std::to_string(layer) + ".";
  const Tensor h = ops::layer_norm(x, p(b + "ln1.gamma"), p(b + "ln1.beta"));
  const Tensor q = ops::linear(h, p(b + "wq.weight"), p(b + "wq.bias"));
  const Tensor k = ops::linear(h, p(b + "wk.weight"), Tensor());
  const Tensor v = ops::linear(h, p(b + "wv.weight"), p(b + "wv.bias"));
  const Tensor a = ops::attention(q, k, v, static_cast<std::size_t>(cfg_.heads), false);
  const Tensor x1 = ops::add(x, ops::linear(a, p(b + "wo.weight"), p(b + "wo.bias")));
  const Tensor h2 = ops::layer_norm(x1, p(b + "ln2.gamma"), p(b + "ln2.beta"));
  const Tensor m = ops::linear(ops::gelu(ops::linear(h2, p(b + "mlp1.weight"), p(b + "mlp1.bias"))),
                               p(b + "mlp2.weight"), p(b + "mlp2.bias"));
  return ops::add(x1, m);
}

TokenGroup Encoder::encode(const ImageTensor& img, const std::string& scale_tag, int crop_index) const {
  if (cfg_.kind == EncoderKind::query)
    throw std::invalid_argument("encoder '" + cfg_.id + "' is a query encoder; use encode_tokens");
  if (!img.square() || img.height != cfg_.input_size)
    throw std::invalid_argument("encoder '" + cfg_.id + "' expects a " + std::to_string(cfg_.input_size) + "x" +
                                std::to_string(cfg_.input_size) + " image, got " + std::to_string(img.height) +
                                "x" + std::to_string(img.width) + " (resampling is the tiler's job)");
  Provenance prov{cfg_.id, scale_tag, crop_index};
  return cfg_.kind == EncoderKind::patch ? encode_patch(img, std::move(prov)) : encode_conv(img, std::move(prov));
}

TokenGroup Encoder::encode_patch(const ImageTensor& img, Provenance prov) const {
  const auto side = static_cast<std::size_t>(cfg_.input_size);
  const Tensor pixels = normalized_pixels(img);
  Tensor x = ops::linear(ops::patchify(pixels, side, side, static_cast<std::size_t>(cfg_.patch_size)),
                         p("patch_embed.weight"), p("patch_embed.bias"));
  if (cfg_.cls_token) {
    const Tensor parts[] = {p("cls"), x};
    x = ops::concat_rows(parts);
  }
  x = ops::add(x, p("pos"));
  for (int l = 0; l < cfg_.depth; ++l) x = transformer_block(x, l);
  x = ops::layer_norm(x, p("ln_f.gamma"), p("ln_f.beta"));
  return make_group(std::move(x), std::move(prov));
}

TokenGroup Encoder::encode_conv(const ImageTensor& img, Provenance prov) const {
  auto side = static_cast<std::size_t>(cfg_.input_size);
  Tensor x = normalized_pixels(img);
  for (std::size_t s = 0; s < cfg_.stride_schedule.size(); ++s) {
    const auto k = static_cast<std::size_t>(cfg_.stride_schedule[s]);
    const std::string b = "stage" + std::to_string(s) + ".";
    x = ops::gelu(ops::linear(ops::patchify(x, side, side, k), p(b + "weight"), p(b + "bias")));
    side /= k;
  }
  x = ops::add(x, ops::depthwise_conv3x3(x, p("dwconv.weight"), side, side));
  x = ops::layer_norm(x, p("ln_f.gamma"), p("ln_f.beta"));
  if (cfg_.cls_token) {
    // Global average-pooled token in the class-token slot keeps the count
    // aligned with the patch encoders.
    const Tensor pooled = ops::reshape(ops::mean(x, 0), {1, static_cast<std::size_t>(cfg_.dim)});
    const Tensor parts[] = {pooled, x};
    x = ops::concat_rows(parts);
  }
  return make_group(std::move(x), std::move(prov));
}

TokenGroup Encoder::encode_tokens(const TokenGroup& input) const {
  if (cfg_.kind != EncoderKind::query)
    throw std::invalid_argument("encoder '" + cfg_.id + "' is not a query encoder");
  if (!input.tokens.defined() || input.tokens.rank() != 2 || input.count() == 0)
    throw std::invalid_argument("query encoder '" + cfg_.id + "' received an empty token group");
  if (input.dim() != static_cast<std::size_t>(cfg_.input_dim))
    throw std::invalid_argument("query encoder '" + cfg_.id + "' expects tokens of width " +
                                std::to_string(cfg_.input_dim) + ", got " + std::to_string(input.dim()));
  const Tensor q = ops::linear(p("queries"), p("wq.weight"), p("wq.bias"));
  const Tensor k = ops::linear(input.tokens, p("wk.weight"), Tensor());
  const Tensor v = ops::linear(input.tokens, p("wv.weight"), p("wv.bias"));
  Tensor out = ops::attention(q, k, v, static_cast<std::size_t>(cfg_.heads), false);
  return make_group(std::move(out), Provenance{cfg_.id, input.provenance.scale_tag, input.provenance.crop_index});
}

TokenGroup patch_encode(const ImageTensor& img, const Encoder& encoder) {
  if (encoder.config().kind != EncoderKind::patch)
    throw std::invalid_argument("patch_encode needs a patch encoder, got " + to_string(encoder.config().kind));
  return encoder.encode(img);
}

TokenGroup conv_encode(const ImageTensor& img, const Encoder& encoder) {
  if (encoder.config().kind != EncoderKind::conv)
    throw std::invalid_argument("conv_encode needs a conv encoder, got " + to_string(encoder.config().kind));
  return encoder.encode(img);
}

TokenGroup query_encode(const TokenGroup& patch_tokens, const Encoder& encoder) {
  return encoder.encode_tokens(patch_tokens);
}

}  // namespace mixpipe
