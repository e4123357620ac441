// Copyright 2026 The mixpipe Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <cstring>

#include "doctest.h"
#include "mixpipe/trainer.hpp"
#include "support.hpp"

using namespace mixpipe;

namespace {

ModelConfig roomy_tiny() {
  ModelConfig cfg = mixpipe::testing::tiny_config();
  cfg.lm.max_seq_len = 256;
  return cfg;
}

StageConfig short_pretrain(std::int64_t total) {
  StageConfig s;
  s.schedule = {1e-3, 1e-4, 1, total, ScheduleShape::linear_warmup_cosine};
  s.caption_items = 2;
  s.text_tokens = 24;
  s.seed = 4;
  return s;
}

StageConfig short_finetune(std::int64_t total) {
  StageConfig s = finetune_defaults();
  s.schedule = {1e-3, 1e-4, 1, total, ScheduleShape::linear_warmup_cosine};
  s.samples = 2;
  s.seed = 6;
  return s;
}

bool same_bits(const Tensor& a, const Tensor& b) {
  return a.numel() == b.numel() && std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(double)) == 0;
}

}  // namespace

TEST_SUITE("model") {
  TEST_CASE("config map round trip and digest") {
    const ModelConfig a = toy_config();
    const ModelConfig b = ModelConfig::from_map(a.to_map());
    CHECK(b.to_map() == a.to_map());
    CHECK(b.digest() == a.digest());
    ModelConfig c = a;
    c.input_res = 64;
    CHECK(c.digest() != a.digest());
    CHECK(toy_config().visual_tokens() == 21);
    CHECK(c.visual_tokens() == 105);
  }

  TEST_CASE("checkpoints restore the model exactly") {
    MultimodalModel m(roomy_tiny());
    const Checkpoint ck = m.to_checkpoint(StageTag::init, 0);
    CHECK(ck.meta.config_digest == m.config().digest());
    const MultimodalModel back = MultimodalModel::from_checkpoint(ck);
    CHECK(bit_equal(back.to_checkpoint(StageTag::init, 0), ck));
    ModelConfig other = roomy_tiny();
    other.lm.depth = 2;
    MultimodalModel m2(other);
    CHECK_THROWS(m2.load_checkpoint(ck));
  }

  TEST_CASE("visual cache serves repeated encodes") {
    const MultimodalModel m(roomy_tiny());
    const ImageTensor img(16, 16, 0.25);
    VisualCache cache;
    const Tensor a = visual_tokens(m, img, false, &cache).tokens;
    const Tensor b = visual_tokens(m, img, false, &cache).tokens;
    CHECK(cache.size() == 1);
    CHECK(same_bits(a, b));
    CHECK(same_bits(a, visual_tokens(m, img, false, nullptr).tokens));
  }
}

TEST_SUITE("trainer") {
  TEST_CASE("zero steps return the input weights and an empty trace") {
    MultimodalModel m(roomy_tiny());
    const Checkpoint before = m.to_checkpoint(StageTag::pretrain_real, 0);
    const PretrainData data = make_pretrain_data(1, 4, 16);
    const StageResult r = train_stage(m, short_pretrain(5), data, 0);
    CHECK(r.trace.records.empty());
    CHECK(bit_equal(r.checkpoint, before));
  }

  TEST_CASE("one finetune step moves lm and mixer but not the encoders") {
    MultimodalModel m(roomy_tiny());
    std::map<std::string, Tensor> before;
    for (const auto& [k, t] : m.params()) before.emplace(k, t.detach());
    const FinetuneData data = make_finetune_data(2, {TaskTag::caption, TaskTag::vqa}, 3);
    train_stage(m, short_finetune(3), data, 1);
    bool lm_moved = false, mixer_moved = false;
    for (const auto& [k, t] : m.params()) {
      const bool same = same_bits(t, before.at(k));
      if (k.rfind("encoder.", 0) == 0) {
        CAPTURE(k);
        CHECK(same);
      }
      if (k.rfind("lm.", 0) == 0) lm_moved = lm_moved || !same;
      if (k.rfind("mixer.", 0) == 0) mixer_moved = mixer_moved || !same;
    }
    CHECK(lm_moved);
    CHECK(mixer_moved);
  }

  TEST_CASE("trace lr follows the schedule and losses are recorded") {
    MultimodalModel m(roomy_tiny());
    const StageConfig cfg = short_pretrain(4);
    const StageResult r = train_stage(m, cfg, make_pretrain_data(1, 4, 16), 4);
    REQUIRE(r.trace.records.size() == 4);
    for (const auto& rec : r.trace.records) {
      CHECK(rec.lr == lr_at_step(rec.step, cfg.schedule));
      REQUIRE(rec.caption_loss.has_value());
      REQUIRE(rec.text_loss.has_value());
      CHECK(rec.total_loss == doctest::Approx(*rec.caption_loss + *rec.text_loss).epsilon(1e-12));
    }
    CHECK(r.checkpoint.meta.step == 4);
    CHECK(r.checkpoint.meta.stage_tag == StageTag::pretrain_real);
  }

  TEST_CASE("pretrain batches are pure in (seed, step)") {
    const PretrainData data = make_pretrain_data(3, 6, 16);
    StageConfig cfg = short_pretrain(10);
    const PretrainBatch a = build_pretrain_batch(data, cfg, 7);
    const PretrainBatch b = build_pretrain_batch(data, cfg, 7);
    CHECK(a.captions == b.captions);
    CHECK(a.text == b.text);
    CHECK(a.captions.size() == 2);
    REQUIRE(a.text.size() == 25);
    CHECK(a.text[0] == 1);
    CHECK(build_pretrain_batch(data, cfg, 8).text != a.text);
    cfg.text_tokens = 0;
    CHECK(build_pretrain_batch(data, cfg, 7).text.empty());
    cfg.text_tokens = 1 << 20;
    CHECK_THROWS(build_pretrain_batch(data, cfg, 7));
  }

  TEST_CASE("finetune batches are pure in (seed, step)") {
    const FinetuneData data = make_finetune_data(2, {TaskTag::caption, TaskTag::rec, TaskTag::vqa}, 4);
    StageConfig cfg = short_finetune(3);
    cfg.samples = 16;
    const auto a = build_finetune_batch(data, cfg, 2);
    CHECK(a.size() == 16);
    CHECK(a == build_finetune_batch(data, cfg, 2));
    CHECK(a != build_finetune_batch(data, cfg, 3));
    for (const auto& r : a) CHECK(r.index < 4);
    CHECK(data.specs().size() == 3);
    CHECK(data.specs()[1].task == TaskTag::rec);
  }

  TEST_CASE("caption sequences use the global view only") {
    ModelConfig cfg = roomy_tiny();
    cfg.input_res = 32;
    const MultimodalModel m(cfg);
    const auto data = make_pretrain_data(1, 1, 4);
    const MixedSequence cap = caption_sequence(m, data.captions[0], nullptr);
    CHECK(cap.visual_embeds.rows() == cfg.tokens_per_group());
    const MixedSequence conv = conversation_sequence(m, data.captions[0].sample, nullptr);
    CHECK(conv.visual_embeds.rows() == cfg.visual_tokens());
  }

  TEST_CASE("finetune warm-up is three percent of an epoch, rounded up") {
    CHECK(finetune_warmup(100) == 3);
    CHECK(finetune_warmup(1) == 1);
    CHECK(finetune_warmup(34) == 2);
    CHECK(finetune_warmup(1000) == 30);
    CHECK_THROWS(finetune_warmup(0));
  }

  TEST_CASE("stage config validation") {
    StageConfig s = short_pretrain(3);
    s.trainable = {"encoder.vit_a."};
    CHECK_THROWS(s.validate());
    s.trainable = {"enc"};
    CHECK_THROWS(s.validate());
    s = short_pretrain(3);
    s.caption_items = 0;
    s.text_tokens = 0;
    CHECK_THROWS(s.validate());
    StageConfig f = short_finetune(3);
    f.samples = 0;
    CHECK_THROWS(f.validate());
    MultimodalModel m(roomy_tiny());
    CHECK_THROWS(train_stage(m, short_pretrain(3), make_pretrain_data(1, 2, 8), 4));
    CHECK_THROWS(train_stage(m, short_finetune(3), make_pretrain_data(1, 2, 8), 1));
  }

  TEST_CASE("loss trace csv round trip") {
    LossTrace t;
    t.records.push_back({1, 1e-4, 2.5, std::nullopt, 2.5});
    t.records.push_back({2, 0.1 + 0.2, std::nullopt, 1.0 / 3.0, 1.0 / 3.0});
    const std::string csv = t.to_csv();
    CHECK(csv.rfind("step,lr,caption_loss,text_loss,total_loss\n1,", 0) == 0);
    const LossTrace back = LossTrace::from_csv(csv);
    REQUIRE(back.records.size() == 2);
    CHECK(back.records[0].caption_loss == 2.5);
    CHECK_FALSE(back.records[0].text_loss.has_value());
    CHECK(back.records[1].lr == 0.1 + 0.2);
    CHECK(back.records[1].text_loss == 1.0 / 3.0);
    CHECK(back.to_csv() == csv);
    CHECK_THROWS(LossTrace::from_csv("nope\n"));
    CHECK_THROWS(LossTrace::from_csv("step,lr,caption_loss,text_loss,total_loss\n1,2\n"));
  }

  TEST_CASE("two-stage run with beta 1 keeps the first pretrain checkpoint") {
    const auto dir = mixpipe::testing::scratch_dir("two_stage");
    TwoStageConfig cfg;
    cfg.model = roomy_tiny();
    cfg.pretrain = short_pretrain(2);
    cfg.mix = WeightMixSpec{short_pretrain(2), 1.0};
    cfg.finetune = short_finetune(2);
    cfg.caption_count = 4;
    cfg.text_sentences = 16;
    cfg.tasks = {TaskTag::caption, TaskTag::vqa};
    cfg.per_task = 2;
    cfg.out_dir = dir;
    const TwoStageResult r = run_two_stage(cfg);
    REQUIRE(r.checkpoints.size() == 4);
    CHECK(r.checkpoints[0].filename() == "stage1_pretrain_real.mxck");
    CHECK(r.checkpoints[2].filename() == "stage1_mixed.mxck");
    CHECK(mixpipe::testing::read_file(r.checkpoints[2]) == mixpipe::testing::read_file(r.checkpoints[0]));
    CHECK(mixpipe::testing::read_file(r.checkpoints[1]) != mixpipe::testing::read_file(r.checkpoints[0]));
    CHECK(r.final_checkpoint.meta.stage_tag == StageTag::finetuned);
    CHECK(std::filesystem::exists(dir / "stage2_finetuned.csv"));
  }
}
