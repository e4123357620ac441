// Copyright 2026 The mixpipe Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <map>

#include "doctest.h"
#include "mixpipe/eval.hpp"
#include "mixpipe/optim.hpp"
#include "support.hpp"

using namespace mixpipe;

namespace {

// Independent area arithmetic for the Monte Carlo oracle.
double oracle_iou(const BBox& a, const BBox& b) {
  const double ix = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double iy = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = ix * iy;
  return inter / ((a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter);
}

// Uniform corners on the 3-decimal grid, so the text form is exact.
BBox random_box(Rng& rng) {
  auto grid = [&] { return static_cast<double>(rng.below(1001)) / 1000.0; };
  double x1, x2, y1, y2;
  do {
    x1 = grid(), x2 = grid();
  } while (x1 == x2);
  do {
    y1 = grid(), y2 = grid();
  } while (y1 == y2);
  return {std::min(x1, x2), std::min(y1, y2), std::max(x1, x2), std::max(y1, y2)};
}

}  // namespace

TEST_SUITE("eval") {
  TEST_CASE("iou examples") {
    const BBox a{0, 0, 0.2, 0.2}, b{0.1, 0, 0.3, 0.2};
    CHECK(iou(a, b) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK(iou(a, a) == 1.0);
    CHECK(iou(a, BBox{0.5, 0.5, 0.9, 0.9}) == 0.0);
    CHECK(iou(a, BBox{0.2, 0, 0.4, 0.2}) == 0.0);
  }

  TEST_CASE("iou is symmetric and bounded") {
    Rng rng(3);
    for (int i = 0; i < 2000; ++i) {
      const BBox a = random_box(rng), b = random_box(rng);
      const double v = iou(a, b);
      CHECK(v == iou(b, a));
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
      CHECK(v == doctest::Approx(oracle_iou(a, b)).epsilon(1e-12).scale(1.0));
    }
  }

  TEST_CASE("rec accuracy from strings") {
    const std::vector<BBox> truth{{0.1, 0.1, 0.4, 0.4}, {0.5, 0.5, 0.9, 0.9}};
    std::vector<std::string> exact;
    for (const auto& b : truth) exact.push_back(serialize_bbox(b));
    CHECK(rec_accuracy(exact, truth).accuracy == 1.0);
    const auto disjoint = rec_accuracy({"[0.600, 0.600, 0.700, 0.700]", "[0.000, 0.000, 0.100, 0.100]"}, truth);
    CHECK(disjoint.accuracy == 0.0);
    CHECK(disjoint.parse_failure_rate == 0.0);
    const auto garbled = rec_accuracy({"somewhere left", "the box " + exact[1]}, truth);
    CHECK(garbled.accuracy == 0.5);
    CHECK(garbled.parse_failure_rate == 0.5);
    CHECK_THROWS(rec_accuracy({"x"}, truth));
    CHECK_THROWS(rec_accuracy(std::vector<std::string>{}, std::vector<BBox>{}));
  }

  TEST_CASE("random-box baseline matches a Monte Carlo estimate") {
    const auto samples = gen_synthetic(TaskTag::rec, 31, 4000);
    Rng rng(77);
    std::vector<std::string> outputs;
    std::vector<BBox> truth;
    for (const auto& s : samples) {
      outputs.push_back(serialize_bbox(random_box(rng)));
      truth.push_back(rec_truth(s));
    }
    const double acc = rec_accuracy(outputs, truth).accuracy;
    // Brute force over fresh draws against the same targets.
    Rng mc(78);
    const int reps = 50;
    double hits = 0;
    for (int r = 0; r < reps; ++r)
      for (const auto& t : truth) hits += oracle_iou(random_box(mc), t) >= 0.5;
    const double p = hits / (reps * truth.size());
    const double sigma = std::sqrt(p * (1 - p) / truth.size());
    CAPTURE(acc);
    CAPTURE(p);
    CHECK(p > 0.0);
    CHECK(std::abs(acc - p) < 3 * sigma);
  }

  TEST_CASE("vqa exact match") {
    CHECK(normalize_answer("  Two. ") == "two");
    CHECK(vqa_exact_match({"Red", "two."}, {"red", "two"}).accuracy == 1.0);
    CHECK(vqa_exact_match({"blue", "blue"}, {"red", "two"}).accuracy == 0.0);
    CHECK(vqa_exact_match({"red circle"}, {"red"}).accuracy == 0.0);
  }

  TEST_CASE("majority answer scores the class prior") {
    const auto samples = gen_synthetic(TaskTag::vqa, 12, 300);
    std::map<std::string, int> counts;
    std::vector<std::string> truth;
    for (const auto& s : samples) {
      truth.push_back(s.sample.turns.back().text);
      ++counts[truth.back()];
    }
    auto best = counts.begin();
    for (auto it = counts.begin(); it != counts.end(); ++it)
      if (it->second > best->second) best = it;
    const std::vector<std::string> constant(truth.size(), best->first);
    CHECK(vqa_exact_match(constant, truth).accuracy ==
          doctest::Approx(static_cast<double>(best->second) / truth.size()).epsilon(1e-15));
  }

  TEST_CASE("uniform model has perplexity equal to the vocabulary") {
    ModelConfig cfg = mixpipe::testing::tiny_config();
    cfg.lm.max_seq_len = 80;
    MultimodalModel m(cfg);
    for (auto& x : m.params().at("lm.head.weight").data()) x = 0.0;
    const double ppl = text_perplexity(m, gen_text_corpus(1, 5, 1));
    CHECK(ppl == doctest::Approx(256.0).epsilon(1e-12));
    CHECK_THROWS(text_perplexity(m, {}));
  }

  TEST_CASE("perplexity is at least one and near one after memorising") {
    ModelConfig cfg = mixpipe::testing::tiny_config();
    cfg.lm.dim = 16;
    cfg.lm.max_seq_len = 80;
    MultimodalModel m(cfg);
    const std::vector<std::string> text{"The baker sold two baskets."};
    const double before = text_perplexity(m, text);
    CHECK(before >= 1.0);
    m.set_trainable({"lm."});
    std::map<std::string, Tensor> lm;
    for (const auto& [k, t] : m.params())
      if (k.rfind("lm.", 0) == 0) lm.emplace(k, t);
    const auto tok = serialize_plain(text[0], 1, 2, true);
    const MixedSequence seq{Tensor(), tok.ids, tok.mask};
    AdamW opt(AdamwHyper{1e-2, 0.9, 0.95, 1e-8, 0.0});
    for (int step = 0; step < 300; ++step) {
      for (auto& [_, t] : lm) t.zero_grad();
      backward(m.lm().loss(seq));
      opt.step(lm);
    }
    const double after = text_perplexity(m, text);
    CHECK(after >= 1.0);
    CHECK(after < 1.1);
  }

  TEST_CASE("probe scoring needs marker samples") {
    const MultimodalModel m(mixpipe::testing::tiny_config());
    CHECK_THROWS(probe_accuracy(m, gen_synthetic(TaskTag::vqa, 1, 1), nullptr));
  }

  TEST_CASE("eval report csv") {
    EvalReport r;
    r.add("rec_accuracy", 0.25, 4, "abc");
    r.add("text_perplexity", 1.0 / 3.0 + 7, 5, "abc");
    const std::string csv = r.to_csv();
    CHECK(csv.rfind("metric,value,n,config_digest\nrec_accuracy,0.25,4,abc\n", 0) == 0);
    const EvalReport back = EvalReport::from_csv(csv);
    CHECK(back.metrics == r.metrics);
    EvalReport bad;
    bad.add("vqa_exact_match", 1.5, 2, "x");
    CHECK_THROWS(bad.validate());
    EvalReport empty_n;
    empty_n.add("rec_accuracy", 0.5, 0, "x");
    CHECK_THROWS(empty_n.to_csv());
    CHECK_THROWS(r.add("a,b", 1, 1, "x"));
    CHECK_THROWS(EvalReport::from_csv("metric,value\n"));
  }
}
