// Copyright 2026 The mixpipe Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <vector>

#include "doctest.h"
#include "mixpipe/gradcheck.hpp"
#include "mixpipe/language_core.hpp"
#include "mixpipe/ops.hpp"
#include "mixpipe/optim.hpp"
#include "mixpipe/random.hpp"

using namespace mixpipe;

namespace {

LMConfig small_lm() {
  LMConfig c;
  c.dim = 16;
  c.depth = 1;
  c.heads = 2;
  c.max_seq_len = 64;
  return c;
}

MixedSequence text_seq(const std::string& text, const LMConfig& c) {
  MixedSequence s;
  s.text_ids.push_back(c.bos_token);
  for (auto id : encode_text(text)) s.text_ids.push_back(id);
  s.text_ids.push_back(c.eos_token);
  s.loss_mask.assign(s.text_ids.size(), 1);
  s.loss_mask[0] = 0;
  return s;
}

Tensor randn(Rng& rng, Shape shape, double scale = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = scale * rng.normal();
  return Tensor(std::move(shape), std::move(v));
}

}  // namespace

TEST_SUITE("language_core") {
  TEST_CASE("byte tokenizer round-trips and avoids the special ids") {
    const std::string s = "A red dot: [0.100, 0.200]\n";
    const auto ids = encode_text(s);
    CHECK(ids.size() == s.size());
    for (auto id : ids) CHECK(id > 2);
    CHECK(decode_text(ids) == s);
  }

  TEST_CASE("config and sequence validation") {
    LMConfig c = small_lm();
    c.heads = 3;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    MixedSequence s = text_seq("ab", small_lm());
    s.loss_mask.pop_back();
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
    MixedSequence first = text_seq("ab", small_lm());
    first.loss_mask[0] = 1;
    CHECK_THROWS_AS(first.validate(), std::invalid_argument);
  }

  TEST_CASE("overlength sequences name the budget") {
    const LanguageModel lm(small_lm());
    try {
      lm.forward(text_seq(std::string(80, 'x'), small_lm()));
      FAIL("overlength sequence accepted");
    } catch (const std::invalid_argument& e) {
      CHECK(std::string(e.what()).find("max_seq_len 64") != std::string::npos);
    }
  }

  TEST_CASE("logits at t ignore every later token") {
    const LanguageModel lm(small_lm());
    Rng rng(1);
    MixedSequence s = text_seq("the blue square", small_lm());
    s.visual_embeds = randn(rng, {5, 16}, 0.5);
    for (int trial = 0; trial < 6; ++trial) {
      const std::size_t t = 1 + rng.below(s.text_ids.size() - 2);
      MixedSequence edited = s;
      for (std::size_t j = t + 1; j < edited.text_ids.size(); ++j) edited.text_ids[j] = 3 + rng.below(250);
      const Tensor a = lm.forward(s), b = lm.forward(edited);
      for (std::size_t r = 0; r <= t; ++r)
        for (std::size_t j = 0; j < a.cols(); ++j) CHECK(a.at(r, j) == b.at(r, j));
    }
  }

  TEST_CASE("every visual position reaches the first text position") {
    const LanguageModel lm(small_lm());
    Rng rng(2);
    MixedSequence s = text_seq("hi", small_lm());
    s.visual_embeds = randn(rng, {6, 16}, 0.5);
    const Tensor base = lm.forward(s);
    for (std::size_t v = 0; v < 6; ++v) {
      MixedSequence p = s;
      p.visual_embeds = s.visual_embeds.detach();
      // A random direction: a constant shift would vanish under layer norm.
      for (std::size_t j = 0; j < 16; ++j) p.visual_embeds.data()[v * 16 + j] += 0.3 * rng.normal();
      const Tensor out = lm.forward(p);
      double diff = 0;
      for (std::size_t j = 0; j < out.cols(); ++j) diff += std::abs(out.at(0, j) - base.at(0, j));
      CAPTURE(v);
      CHECK(diff > 0.0);
    }
  }

  TEST_CASE("no visual prefix is a plain text forward") {
    const LanguageModel lm(small_lm());
    const MixedSequence s = text_seq("plain", small_lm());
    const Tensor logits = lm.forward(s);
    CHECK(logits.shape() == Shape{s.text_ids.size(), 256});
    // Shifting the same text behind a visual prefix moves it to later positions,
    // so the logits differ: the prefix really is part of the sequence.
    MixedSequence with = s;
    with.visual_embeds = Tensor(Shape{1, 16});
    CHECK(lm.forward(with).at(0, 0) != logits.at(0, 0));
  }

  TEST_CASE("masking and targets") {
    MixedSequence s = text_seq("ab", small_lm());
    s.loss_mask = {0, 0, 1, 1};
    const auto t = LanguageModel::targets(s);
    CHECK(t == std::vector<std::int64_t>{ops::kIgnoreIndex, s.text_ids[2], s.text_ids[3], ops::kIgnoreIndex});
    s.loss_mask = {0, 0, 0, 0};
    CHECK_THROWS(LanguageModel(small_lm()).loss(s));
  }

  TEST_CASE("untrained model sits near ln V") {
    const LanguageModel lm(LMConfig{});
    const double loss = lm.loss(text_seq("a fairly long sentence of ordinary bytes to score.", LMConfig{})).item();
    CHECK(std::abs(loss - std::log(256.0)) < 0.05 * std::log(256.0));
  }

  TEST_CASE("confident correct logits drive the loss to zero") {
    std::vector<double> v(3 * 5, 0.0);
    const std::vector<std::int64_t> t{1, 4, 0};
    for (std::size_t r = 0; r < 3; ++r) v[r * 5 + t[r]] = 60.0;
    CHECK(ops::cross_entropy(Tensor(Shape{3, 5}, v), t).item() < 1e-20);
  }

  TEST_CASE("batch loss is the token-weighted mean") {
    const LanguageModel lm(small_lm());
    const MixedSequence a = text_seq("abc", small_lm()), b = text_seq("a much longer one", small_lm());
    const double la = lm.loss(a).item(), lb = lm.loss(b).item();
    const double na = a.text_ids.size() - 1, nb = b.text_ids.size() - 1;
    CHECK(lm.batch_loss({a, b}).item() == doctest::Approx((la * na + lb * nb) / (na + nb)).epsilon(1e-12));
  }

  TEST_CASE("full loss passes the gradient check") {
    LMConfig c = small_lm();
    c.dim = 8;
    LanguageModel lm(c);
    Rng rng(3);
    MixedSequence s = text_seq("ok", c);
    s.visual_embeds = randn(rng, {2, 8}, 0.5);
    std::vector<Tensor> params;
    for (auto& [k, t] : lm.params()) {
      // Off the initial point so no gradient is structurally tiny.
      for (auto& x : t.data()) x += 0.3 * rng.normal();
      params.push_back(t);
    }
    CHECK(grad_check([&] { return lm.loss(s); }, params, 1e-5) < 1e-3);
  }

  TEST_CASE("generation: zero budget, determinism and memorisation") {
    LMConfig c = small_lm();
    LanguageModel lm(c);
    MixedSequence prompt;
    prompt.text_ids = {c.bos_token};
    prompt.loss_mask = {0};
    CHECK(lm.generate(prompt, 0).empty());
    CHECK(lm.generate(prompt, 5) == lm.generate(prompt, 5));
    CHECK_THROWS(lm.generate(prompt, -1));

    const MixedSequence target = text_seq("red circle", c);
    AdamW opt(AdamwHyper{1e-2, 0.9, 0.95, 1e-8, 0.0});
    for (int step = 0; step < 200; ++step) {
      for (auto& [_, t] : lm.params()) t.zero_grad();
      backward(lm.loss(target));
      opt.step(lm.params());
    }
    CHECK(lm.loss(target).item() < 0.05);
    CHECK(decode_text(lm.generate(prompt, 20)) == "red circle");
  }
}
