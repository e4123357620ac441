// Copyright 2026 The mixpipe Authors
// SPDX-License-Identifier: Apache-2.0
//
// One PASS/FAIL line per acceptance criterion. Arguments select criteria by
// number; with none, all ten run. Exceeding a criterion's time budget fails it.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mixpipe/checkpoint.hpp"
#include "mixpipe/eval.hpp"
#include "mixpipe/gradcheck.hpp"
#include "mixpipe/hires_tiler.hpp"
#include "mixpipe/model.hpp"
#include "mixpipe/schedule.hpp"
#include "mixpipe/task_data.hpp"
#include "mixpipe/trainer.hpp"
#include "support.hpp"

namespace mx = mixpipe;
using mx::testing::read_file;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  const char* name;
  double budget_s;
  std::function<Outcome()> run;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---- 1: visual token arithmetic --------------------------------------------

Outcome token_arithmetic() {
  struct Case {
    int res;
    long long expect;
  };
  const Case cases[] = {{224, 289}, {448, 1445}, {762, 2890}};
  std::string detail;
  bool ok = true;
  for (const auto& c : cases) {
    const mx::ModelConfig cfg = mx::full_scale_config(c.res);
    const mx::MultimodalModel model(cfg);
    // Count by actually running the frozen encoders and the mixer.
    const mx::ImageTensor img(c.res, c.res, 0.25);
    const mx::NoGradGuard guard;
    const mx::EncodedImage enc = model.encode(img);
    const auto tokens = static_cast<long long>(model.mix(enc).count());
    std::size_t patch = 0;
    for (const auto& g : enc.at(0).patch) patch = g.count();
    const bool group_ok = patch == 257 && enc.at(0).query.count() == 32;
    ok = ok && tokens == c.expect && static_cast<long long>(cfg.visual_tokens()) == c.expect && group_ok;
    detail += std::to_string(c.res) + "px->" + std::to_string(tokens) + " ";
    if (c.res == 224) detail += "(" + std::to_string(patch) + "+" + std::to_string(enc.at(0).query.count()) + ") ";
  }
  return {ok, detail};
}

// ---- 2: tiling layout ---------------------------------------------------------

bool rects_tile_image(const mx::TilingPlan& plan) {
  const int n = plan.input_res;
  std::vector<int> hits(static_cast<std::size_t>(n) * n, 0);
  if (plan.views.empty() || plan.views[0].kind != mx::ViewKind::global) return false;
  if (plan.views[0].source_rect != mx::Rect{0, 0, n, n}) return false;
  for (std::size_t i = 1; i < plan.views.size(); ++i) {
    const auto& v = plan.views[i];
    if (v.kind != mx::ViewKind::crop || v.resample_to != plan.base_res) return false;
    const auto& r = v.source_rect;
    if (r.w <= 0 || r.h <= 0 || r.x < 0 || r.y < 0 || r.x + r.w > n || r.y + r.h > n) return false;
    for (int y = r.y; y < r.y + r.h; ++y)
      for (int x = r.x; x < r.x + r.w; ++x) ++hits[static_cast<std::size_t>(y) * n + x];
  }
  if (plan.views.size() == 1) return true;
  for (int h : hits)
    if (h != 1) return false;
  return true;
}

Outcome tiling_layout() {
  const mx::TilingPlan p448 = mx::make_plan(448, 224);
  const std::vector<mx::Rect> corners = {{0, 0, 224, 224}, {224, 0, 224, 224}, {0, 224, 224, 224}, {224, 224, 224, 224}};
  bool ok = p448.views.size() == 5;
  for (std::size_t i = 0; ok && i < 4; ++i) ok = p448.views[i + 1].source_rect == corners[i];
  const mx::TilingPlan p762 = mx::make_plan(762, 224);
  ok = ok && p762.views.size() == 10;
  int swept = 0;
  for (int base : {14, 32, 224})
    for (int res = base; res <= 4 * base + 7; res += (base == 224 ? 5 : 1)) {
      const mx::TilingPlan plan = mx::make_plan(res, base);
      const int k = res / base;
      const std::size_t expect_views = k >= 2 ? static_cast<std::size_t>(k * k + 1) : 1;
      ok = ok && plan.views.size() == expect_views && rects_tile_image(plan);
      ++swept;
    }
  return {ok, "448->" + std::to_string(p448.views.size()) + " views, 762->" + std::to_string(p762.views.size()) +
                  " views, " + std::to_string(swept) + " plans swept"};
}

// ---- 3: weight mixing ---------------------------------------------------------

mx::Checkpoint random_checkpoint(std::uint64_t seed) {
  mx::Rng rng(seed);
  mx::Checkpoint c;
  for (const char* key : {"lm.a", "lm.b", "mixer.w"}) {
    std::vector<double> v(12);
    for (auto& x : v) x = rng.normal();
    c.entries.emplace(key, mx::Tensor({3, 4}, v));
  }
  c.entries.emplace("encoder.vit.w", mx::Tensor({2, 2}, {1.5, -2.0, 0.25, 8.0}));
  c.meta.stage_tag = mx::StageTag::pretrain_real;
  c.meta.config_digest = "00000000deadbeef";
  c.meta.step = 7;
  return c;
}

bool values_bit_equal(const mx::Checkpoint& a, const mx::Checkpoint& b) {
  if (a.entries.size() != b.entries.size()) return false;
  for (const auto& [k, t] : a.entries) {
    const auto it = b.entries.find(k);
    if (it == b.entries.end() || it->second.shape() != t.shape()) return false;
    const auto x = t.data(), y = it->second.data();
    for (std::size_t i = 0; i < x.size(); ++i)
      if (std::memcmp(&x[i], &y[i], sizeof(double)) != 0) return false;
  }
  return true;
}

Outcome weight_mixing() {
  const mx::Checkpoint a = random_checkpoint(1), b0 = random_checkpoint(2);
  mx::Checkpoint b = b0;
  b.entries["encoder.vit.w"] = a.entries.at("encoder.vit.w");
  b.meta.stage_tag = mx::StageTag::pretrain_syn;
  bool ok = values_bit_equal(mx::mix_weights(a, b, 1.0), a) && values_bit_equal(mx::mix_weights(a, b, 0.0), b);
  int sym = 0;
  for (double beta : {0.0, 0.1, 0.25, 0.3, 0.5, 0.7, 0.9, 1.0, 1.0 / 3.0}) {
    ok = ok && values_bit_equal(mx::mix_weights(a, b, beta), mx::mix_weights(b, a, 1.0 - beta));
    ++sym;
  }
  const double scalar = mx::mix_value(2.0, 4.0, 0.5);
  ok = ok && scalar == 3.0;
  const std::string bytes = mx::serialize_checkpoint(a);
  ok = ok && mx::serialize_checkpoint(mx::parse_checkpoint(bytes)) == bytes;
  const auto dir = mx::testing::scratch_dir("acc3");
  mx::save(a, dir / "a.mxck");
  mx::save(mx::load(dir / "a.mxck"), dir / "b.mxck");
  ok = ok && read_file(dir / "a.mxck") == read_file(dir / "b.mxck") && read_file(dir / "a.mxck") == bytes;
  return {ok, "endpoints bit-equal, " + std::to_string(sym) + " symmetric betas, mix(2,4,0.5)=" + fmt("%g", scalar) +
                  ", round-trip " + std::to_string(bytes.size()) + " bytes"};
}

// ---- 4: gradient verification ------------------------------------------------

Outcome gradient_check() {
  mx::ModelConfig cfg = mx::testing::tiny_config();
  for (auto& e : cfg.patch_encoders) e.frozen = false;
  cfg.query_encoder.frozen = false;
  mx::MultimodalModel model(cfg);
  model.set_trainable({"encoder.", "mixer.", "lm."});

  // Checked at a generic point, init + N(0, 0.3^2): at init many attention
  // gradients sit near the difference quotient's resolution.
  mx::Rng rng(5);
  for (auto& [k, t] : model.params())
    for (auto& v : t.data()) v += 0.3 * rng.normal();
  mx::ImageTensor img(16, 16);
  for (auto& v : img.data) v = rng.uniform();
  const auto text = mx::serialize_plain("a red dot.", cfg.lm.bos_token, cfg.lm.eos_token, true);
  auto loss = [&] {
    mx::MixedSequence seq;
    seq.visual_embeds = model.mix(model.encode(img)).tokens;
    seq.text_ids = text.ids;
    seq.loss_mask = text.mask;
    return model.lm().loss(seq);
  };
  std::vector<mx::Tensor> params;
  std::size_t coords = 0;
  std::set<std::string> groups;
  for (auto& [k, t] : model.params()) {
    params.push_back(t);
    coords += t.numel();
    groups.insert(k.substr(0, k.find('.')));
  }
  const double err = mx::grad_check(loss, params, 1e-5);
  const bool covers = groups == std::set<std::string>{"encoder", "mixer", "lm"};
  return {err < 1e-3 && covers, "max rel err " + fmt("%.3e", err) + " over " + std::to_string(coords) +
                                    " coordinates in " + std::to_string(params.size()) + " tensors"};
}

// ---- 5: schedule ------------------------------------------------------------------

Outcome schedule_fidelity() {
  const mx::ScheduleConfig cfg{5e-5, 5e-6, 2000, 180000, mx::ScheduleShape::linear_warmup_cosine};
  struct Point {
    std::int64_t step;
    double lr;
  };
  const Point pts[] = {{0, 0.0}, {2000, 5e-5}, {91000, 2.75e-5}, {180000, 5e-6}};
  double worst = 0;
  bool ok = true;
  for (const auto& p : pts) {
    const double got = mx::lr_at_step(p.step, cfg);
    if (p.lr == 0.0) {
      ok = ok && got == 0.0;
      continue;
    }
    worst = std::max(worst, std::abs(got - p.lr) / p.lr);
  }
  return {ok && worst < 1e-12, "max rel err " + fmt("%.2e", worst)};
}

// ---- 6: forgetting ---------------------------------------------------------------

Outcome forgetting() {
  constexpr std::uint64_t kSeed = 1;
  const mx::ModelConfig cfg = mx::toy_config();
  const mx::PretrainData data = mx::make_pretrain_data(kSeed, 64, 512);
  const auto held_out_text = mx::gen_text_corpus(kSeed, 64, 1);
  const auto held_out_captions = mx::gen_synthetic(mx::TaskTag::caption, 999, 32);

  // The "off-the-shelf" language model: text-only training from scratch.
  mx::MultimodalModel base(cfg);
  mx::StageConfig lm_stage;
  lm_stage.caption_items = 0;
  lm_stage.schedule = {1e-3, 1e-4, 30, 400, mx::ScheduleShape::linear_warmup_cosine};
  lm_stage.tag = mx::StageTag::init;
  const mx::Checkpoint start = mx::train_stage(base, lm_stage, data, 400).checkpoint;

  mx::StageConfig joint;
  joint.schedule = {3e-4, 3e-5, 50, 2000, mx::ScheduleShape::linear_warmup_cosine};
  mx::StageConfig caption_only = joint;
  caption_only.text_tokens = 0;

  struct Run {
    double text0, text1, cap0, cap1;
  };
  auto run = [&](const mx::StageConfig& stage) {
    mx::MultimodalModel model(cfg);
    model.load_checkpoint(start);
    mx::VisualCache cache;
    Run r{};
    r.text0 = mx::text_loss(model, held_out_text);
    r.cap0 = mx::caption_loss(model, held_out_captions, &cache);
    mx::train_stage(model, stage, data, stage.schedule.total_steps, &cache);
    r.text1 = mx::text_loss(model, held_out_text);
    r.cap1 = mx::caption_loss(model, held_out_captions, &cache);
    return r;
  };
  const Run j = run(joint), c = run(caption_only);
  const bool ok = j.text1 < c.text1 && c.text1 > c.text0 && j.cap1 <= 0.5 * j.cap0 && c.cap1 <= 0.5 * c.cap0;
  char buf[320];
  std::snprintf(buf, sizeof buf,
                "held-out text joint %.3f->%.3f, caption-only %.3f->%.3f; caption joint %.3f->%.3f, "
                "caption-only %.3f->%.3f",
                j.text0, j.text1, c.text0, c.text1, j.cap0, j.cap1, c.cap0, c.cap1);
  return {ok, buf};
}

// ---- 7: overfit sanity ---------------------------------------------------------------

Outcome overfit() {
  const mx::ModelConfig cfg = mx::toy_config();
  mx::MultimodalModel model(cfg);
  const mx::FinetuneData data =
      mx::make_finetune_data(3, {mx::TaskTag::caption, mx::TaskTag::vqa, mx::TaskTag::rec, mx::TaskTag::reg}, 8);
  mx::StageConfig stage = mx::finetune_defaults();
  stage.schedule = {2e-3, 1e-4, 20, 500, mx::ScheduleShape::linear_warmup_cosine};
  stage.hyper.weight_decay = 0.0;
  mx::VisualCache cache;
  mx::train_stage(model, stage, data, 500, &cache);

  std::vector<mx::SyntheticSample> all;
  for (const auto& d : data.datasets) all.insert(all.end(), d.begin(), d.end());
  double loss;
  {
    const mx::NoGradGuard guard;
    std::vector<mx::MixedSequence> seqs;
    for (const auto& s : all) seqs.push_back(mx::conversation_sequence(model, s.sample, &cache));
    loss = model.lm().batch_loss(seqs).item();
  }
  const auto outputs = mx::generate_responses(model, all, 96, &cache);
  int exact = 0;
  for (std::size_t i = 0; i < all.size(); ++i) exact += outputs[i] == all[i].sample.turns.back().text;
  return {loss < 0.05 && exact >= 30, "32-sample loss " + fmt("%.4f", loss) + ", exact responses " +
                                          std::to_string(exact) + "/32"};
}

// ---- 8: high-resolution probe ----------------------------------------------------------

Outcome hires_probe() {
  constexpr std::size_t kTrain = 1024, kEval = 512;
  const auto train = mx::gen_marker_probe(21, kTrain);
  const auto eval = mx::gen_marker_probe(22, kEval);
  mx::FinetuneData data;
  data.names = {"marker"};
  data.datasets = {train};

  auto run = [&](int input_res) {
    mx::ModelConfig cfg = mx::toy_config();
    cfg.input_res = input_res;
    mx::MultimodalModel model(cfg);
    mx::StageConfig stage = mx::finetune_defaults();
    stage.schedule = {1e-3, 5e-5, 50, 1500, mx::ScheduleShape::linear_warmup_cosine};
    stage.seed = 9;
    mx::VisualCache cache;
    mx::train_stage(model, stage, data, stage.schedule.total_steps, &cache);
    return mx::probe_accuracy(model, eval, &cache);
  };
  const mx::ScoreResult tiled = run(64), global = run(32);
  const double gap = tiled.accuracy - global.accuracy;
  return {gap >= 0.10 && tiled.n >= 500, "5-view " + fmt("%.3f", tiled.accuracy) + " vs global-only " +
                                              fmt("%.3f", global.accuracy) + " over " + std::to_string(tiled.n) +
                                              " samples"};
}

// ---- 9: template fidelity ---------------------------------------------------------------

// Instruction cells of the table in paper.md, wrapped lines joined by a space and
// the two-alternative cells split.
std::vector<std::string> table_instructions() {
  const std::string doc = read_file(mx::testing::source_dir() / "paper.md");
  const auto begin = doc.find("\\begin{tabular}{c|c}");
  const auto end = doc.find("\\end{tabular}", begin);
  std::vector<std::string> out;
  if (begin == std::string::npos || end == std::string::npos) return out;
  std::istringstream rows(doc.substr(begin, end - begin));
  std::string line;
  while (std::getline(rows, line)) {
    const auto amp = line.find('&');
    if (amp == std::string::npos || line.rfind("Instructions", 0) == 0) continue;
    std::string cell = line.substr(0, amp);
    cell = std::regex_replace(cell, std::regex(R"(\\([{}]))"), "$1");
    cell = std::regex_replace(cell, std::regex(R"(\s+$)"), "");
    std::vector<std::string> parts;
    const bool alternatives = cell.find("Detect all objects") == 0 || cell.find("Detect all people") == 0;
    if (alternatives) {
      const auto br = cell.find("\\\\");
      parts = {cell.substr(0, br), cell.substr(br + 2)};
    } else {
      parts = {std::regex_replace(cell, std::regex(R"(\s*\\\\\s*)"), " ")};
    }
    for (auto p : parts) {
      p = std::regex_replace(p, std::regex(R"(^\s+|\s+$)"), "");
      out.push_back(p == "-" ? "" : p);
    }
  }
  return out;
}

Outcome template_fidelity() {
  const auto expected = table_instructions();
  const auto& table = mx::instruction_table();
  bool ok = expected.size() == table.size() && !expected.empty();
  std::size_t matched = 0;
  for (std::size_t i = 0; ok && i < table.size(); ++i) {
    if (table[i].text == expected[i])
      ++matched;
    else
      ok = false;
  }
  ok = ok && mx::instruction_for(mx::TaskTag::vqa) == "Answer the question using a single word or phrase." &&
       mx::instruction_for(mx::TaskTag::detection) == "Detect all objects shown in the image." &&
       mx::instruction_for(mx::TaskTag::classify) == "Classify the image.";
  return {ok, std::to_string(matched) + "/" + std::to_string(expected.size()) + " table entries byte-equal"};
}

// ---- 10: end-to-end determinism --------------------------------------------------------

Outcome determinism() {
  auto config = [](const std::filesystem::path& dir) {
    mx::TwoStageConfig cfg;
    cfg.model = mx::toy_config();
    cfg.pretrain.schedule = {3e-4, 3e-5, 5, 40, mx::ScheduleShape::linear_warmup_cosine};
    mx::WeightMixSpec mix;
    mix.continued.schedule = {3e-4, 3e-5, 5, 20, mx::ScheduleShape::linear_warmup_cosine};
    mix.beta = 0.5;
    cfg.mix = mix;
    cfg.finetune.schedule = {3e-4, 3e-5, 5, 40, mx::ScheduleShape::linear_warmup_cosine};
    cfg.out_dir = dir;
    return cfg;
  };
  const auto d1 = mx::testing::scratch_dir("acc10_a"), d2 = mx::testing::scratch_dir("acc10_b");
  const auto r1 = mx::run_two_stage(config(d1));
  const auto r2 = mx::run_two_stage(config(d2));
  bool ok = r1.checkpoints.size() == 4 && r2.checkpoints.size() == 4;
  const std::string f1 = read_file(r1.checkpoints.back()), f2 = read_file(r2.checkpoints.back());
  ok = ok && !f1.empty() && f1 == f2;
  // The persisted mix is the mix of the persisted stage checkpoints.
  const mx::Checkpoint mixed = mx::mix_weights(mx::load(r1.checkpoints[0]), mx::load(r1.checkpoints[1]), 0.5);
  ok = ok && mx::serialize_checkpoint(mixed) == read_file(r1.checkpoints[2]);
  return {ok, "final checkpoint " + std::to_string(f1.size()) + " bytes, runs " + (f1 == f2 ? "identical" : "differ")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria = {
      {1, "token arithmetic 289/1445/2890", 1, token_arithmetic},
      {2, "tiling layout 448->5, 762->10, coverage sweep", 5, tiling_layout},
      {3, "weight mixing endpoints/symmetry/round-trip", 1, weight_mixing},
      {4, "gradient check of the full model", 120, gradient_check},
      {5, "learning-rate schedule fidelity", 1, schedule_fidelity},
      {6, "forgetting: joint vs caption-only pretraining", 900, forgetting},
      {7, "overfit 32 samples: loss < 0.05, >= 30/32 exact", 300, overfit},
      {8, "high-resolution probe: 5-view beats global by >= 10 points", 1800, hires_probe},
      {9, "instruction template fidelity", 1, template_fidelity},
      {10, "end-to-end determinism of run_two_stage", 1200, determinism},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  int failures = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_budget = secs <= c.budget_s;
    const bool pass = o.pass && in_budget;
    failures += !pass;
    std::printf("criterion %2d: %s  %s | %s | %.2fs of %.0fs budget%s\n", c.id, pass ? "PASS" : "FAIL", c.name,
                o.detail.c_str(), secs, c.budget_s, in_budget ? "" : " (over budget)");
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
