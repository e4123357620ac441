// Copyright 2026 The mixpipe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Two-stage recipe. Stage 1 trains the language model and projections on
// caption batches (global view only, no instructions) joined with a raw
// text stream; stage 2 fine-tunes on a size-proportional mix of tasks.
// Encoders stay frozen throughout.
//
// Full-scale values kept for reference: 640 image-text pairs plus 65,536
// text tokens per stage-1 batch, 180k steps, lr 5e-5 -> 5e-6 with 2k warm-up
// steps; stage 2 uses batch 128, lr 2e-5 and 0.03 epoch of warm-up.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mixpipe/checkpoint.hpp"
#include "mixpipe/model.hpp"
#include "mixpipe/optim.hpp"
#include "mixpipe/schedule.hpp"
#include "mixpipe/task_data.hpp"

namespace mixpipe {

enum class StageKind { pretrain, finetune };

std::string to_string(StageKind kind);

struct StageConfig {
  StageKind stage = StageKind::pretrain;
  std::vector<std::string> trainable{"lm.", "mixer."};
  ScheduleConfig schedule{3e-4, 3e-5, 50, 2000, ScheduleShape::linear_warmup_cosine};
  int caption_items = 8;  // pretrain; 0 only when ablating
  int text_tokens = 256;  // pretrain; 0 drops the text stream
  int samples = 8;        // finetune batch
  AdamwHyper hyper;       // lr is replaced by the schedule each step
  std::uint64_t seed = 1;
  StageTag tag = StageTag::pretrain_real;

  void validate() const;
};

StageConfig finetune_defaults();
// ceil(0.03 * steps_per_epoch)
std::int64_t finetune_warmup(std::int64_t steps_per_epoch);

struct TraceRecord {
  std::int64_t step = 0;
  double lr = 0;
  std::optional<double> caption_loss;
  std::optional<double> text_loss;
  double total_loss = 0;
};

struct LossTrace {
  std::vector<TraceRecord> records;

  // "step,lr,caption_loss,text_loss,total_loss", absent values left empty.
  std::string to_csv() const;
  static LossTrace from_csv(const std::string& text);
  void write_csv(const std::filesystem::path& path) const;
};

struct PretrainData {
  std::vector<SyntheticSample> captions;
  std::string text_stream;  // training sentences joined by single spaces
};

PretrainData make_pretrain_data(std::uint64_t seed, std::size_t captions, std::size_t sentences,
                                int caption_style = 0, int image_size = 32);

struct PretrainBatch {
  std::int64_t step = 0;
  std::vector<std::size_t> captions;  // indices into PretrainData::captions
  std::vector<std::int64_t> text;     // bos + text_tokens bytes, empty when ablated
};

// Depends only on (cfg.seed, step).
PretrainBatch build_pretrain_batch(const PretrainData& data, const StageConfig& cfg, std::int64_t step);

struct FinetuneData {
  std::vector<std::string> names;
  std::vector<std::vector<SyntheticSample>> datasets;

  std::vector<DatasetSpec> specs() const;
};

// One dataset per task with `per_task` samples each.
FinetuneData make_finetune_data(std::uint64_t seed, const std::vector<TaskTag>& tasks, std::size_t per_task,
                                int image_size = 32);

// Batch of cfg.samples references, depending only on (cfg.seed, step).
std::vector<SampleRef> build_finetune_batch(const FinetuneData& data, const StageConfig& cfg, std::int64_t step);

// Training / scoring sequences for a sample. Pretrain-style captions use the
// global view only and no prompt.
MixedSequence conversation_sequence(const MultimodalModel& model, const ConversationSample& sample,
                                    VisualCache* cache);
MixedSequence caption_sequence(const MultimodalModel& model, const SyntheticSample& sample, VisualCache* cache);
MixedSequence prompt_sequence(const MultimodalModel& model, const ImageTensor* image, const std::string& user_text,
                              VisualCache* cache);

struct StageResult {
  Checkpoint checkpoint;
  LossTrace trace;
};

// `steps` updates using lr_at_step(1..steps); steps must not exceed the
// schedule's total. Non-trainable tensors are verified unchanged afterwards.
StageResult train_stage(MultimodalModel& model, const StageConfig& cfg, const PretrainData& data, std::int64_t steps,
                        VisualCache* cache = nullptr);
StageResult train_stage(MultimodalModel& model, const StageConfig& cfg, const FinetuneData& data, std::int64_t steps,
                        VisualCache* cache = nullptr);

// Mean next-token loss over held-out sentences (bos + text + eos each).
double text_loss(const MultimodalModel& model, const std::vector<std::string>& texts);
// Mean caption loss over samples, global view only.
double caption_loss(const MultimodalModel& model, const std::vector<SyntheticSample>& samples, VisualCache* cache);

struct WeightMixSpec {
  StageConfig continued;  // continued pre-training on the second caption domain
  double beta = 0.5;
};

struct TwoStageConfig {
  ModelConfig model;
  StageConfig pretrain;
  std::optional<WeightMixSpec> mix;
  StageConfig finetune = finetune_defaults();
  std::uint64_t data_seed = 1;
  std::size_t caption_count = 64;
  std::size_t text_sentences = 256;
  std::vector<TaskTag> tasks{TaskTag::caption, TaskTag::vqa, TaskTag::rec, TaskTag::detection};
  std::size_t per_task = 16;
  std::filesystem::path out_dir = "run";
};

struct TwoStageResult {
  Checkpoint final_checkpoint;
  std::vector<std::filesystem::path> checkpoints;  // in the order written
};

// Pretrain on domain A -> optional continued pretrain on domain B and mix ->
// fine-tune. Every stage's checkpoint and loss trace is written to out_dir.
TwoStageResult run_two_stage(const TwoStageConfig& cfg);

}  // namespace mixpipe
