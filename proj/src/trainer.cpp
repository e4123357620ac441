// Copyright 2026 The mixpipe Authors
// SPDX-License-Identifier: Apache-2.0

#include "mixpipe/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "mixpipe/encoders.hpp"
#include "mixpipe/ops.hpp"

namespace mixpipe {
namespace {

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

MixedSequence with_visual(const MultimodalModel& model, const ImageTensor* image, bool global_only,
                          TokenizedText text, VisualCache* cache) {
  MixedSequence seq;
  if (image) seq.visual_embeds = visual_tokens(model, *image, global_only, cache).tokens;
  seq.text_ids = std::move(text.ids);
  seq.loss_mask = std::move(text.mask);
  return seq;
}

// Frozen-tensor snapshot for the freeze contract.
std::map<std::string, std::vector<double>> snapshot_frozen(const MultimodalModel& model) {
  std::map<std::string, std::vector<double>> snap;
  for (const auto& [k, t] : model.params())
    if (!t.requires_grad()) snap.emplace(k, std::vector<double>(t.data().begin(), t.data().end()));
  return snap;
}

void verify_frozen(const MultimodalModel& model, const std::map<std::string, std::vector<double>>& snap) {
  for (const auto& [k, v] : snap) {
    const auto d = model.params().at(k).data();
    if (std::memcmp(d.data(), v.data(), v.size() * sizeof(double)) != 0)
      throw std::logic_error("frozen tensor '" + k + "' changed during training");
  }
}

template <typename StepFn>
StageResult run_steps(MultimodalModel& model, const StageConfig& cfg, std::int64_t steps, StepFn&& step_loss) {
  cfg.validate();
  if (steps < 0 || steps > cfg.schedule.total_steps)
    throw std::invalid_argument("steps " + std::to_string(steps) + " outside [0, " +
                                std::to_string(cfg.schedule.total_steps) + "]");
  model.set_trainable(cfg.trainable);
  std::map<std::string, Tensor> trainable;
  for (const auto& [k, t] : model.params())
    if (t.requires_grad()) trainable.emplace(k, t);
  const auto frozen = snapshot_frozen(model);
  AdamW opt(cfg.hyper);
  StageResult result;
  for (std::int64_t step = 1; step <= steps; ++step) {
    for (auto& [_, t] : trainable) t.zero_grad();
    TraceRecord rec;
    rec.step = step;
    rec.lr = lr_at_step(step, cfg.schedule);
    Tensor total;
    try {
      total = step_loss(step, rec);
      rec.total_loss = total.item();
      if (!std::isfinite(rec.total_loss)) throw NumericError("loss is not finite");
      backward(total);
    } catch (const NumericError& e) {
      throw NumericError("non-finite loss at step " + std::to_string(step) + " (batch " + std::to_string(step) +
                         " of seed " + std::to_string(cfg.seed) + "): " + e.what());
    }
    opt.set_lr(rec.lr);
    opt.step(trainable);
    result.trace.records.push_back(rec);
  }
  for (auto& [_, t] : trainable) t.zero_grad();
  verify_frozen(model, frozen);
  result.checkpoint = model.to_checkpoint(cfg.tag, steps);
  return result;
}

}  // namespace

std::string to_string(StageKind kind) { return kind == StageKind::pretrain ? "pretrain" : "finetune"; }

void StageConfig::validate() const {
  schedule.validate();
  for (const auto& p : trainable)
    if (p.rfind(kEncoderPrefix, 0) == 0 || std::string(kEncoderPrefix).rfind(p, 0) == 0)
      throw std::invalid_argument("trainable prefix '" + p + "' would unfreeze the encoders");
  if (stage == StageKind::pretrain) {
    if (caption_items < 0 || text_tokens < 0) throw std::invalid_argument("batch sizes must be non-negative");
    if (caption_items == 0 && text_tokens == 0) throw std::invalid_argument("pretrain batch is empty");
  } else if (samples < 1) {
    throw std::invalid_argument("finetune batch needs at least one sample");
  }
}

StageConfig finetune_defaults() {
  StageConfig cfg;
  cfg.stage = StageKind::finetune;
  cfg.schedule = {3e-4, 3e-5, 10, 500, ScheduleShape::linear_warmup_cosine};
  cfg.tag = StageTag::finetuned;
  return cfg;
}

std::int64_t finetune_warmup(std::int64_t steps_per_epoch) {
  if (steps_per_epoch < 1) throw std::invalid_argument("steps_per_epoch must be positive");
  return static_cast<std::int64_t>(std::ceil(0.03 * static_cast<double>(steps_per_epoch)));
}

std::string LossTrace::to_csv() const {
  std::string out = "step,lr,caption_loss,text_loss,total_loss\n";
  for (const auto& r : records) {
    out += std::to_string(r.step) + "," + fmt17(r.lr) + "," + (r.caption_loss ? fmt17(*r.caption_loss) : "") + "," +
           (r.text_loss ? fmt17(*r.text_loss) : "") + "," + fmt17(r.total_loss) + "\n";
  }
  return out;
}

LossTrace LossTrace::from_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != "step,lr,caption_loss,text_loss,total_loss")
    throw std::invalid_argument("loss trace header is missing");
  LossTrace trace;
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (!line.empty() && line.back() == ',') f.emplace_back();
    if (f.size() != 5) throw std::invalid_argument("loss trace line " + std::to_string(lineno) + " needs 5 fields");
    TraceRecord r;
    r.step = std::stoll(f[0]);
    r.lr = std::stod(f[1]);
    if (!f[2].empty()) r.caption_loss = std::stod(f[2]);
    if (!f[3].empty()) r.text_loss = std::stod(f[3]);
    r.total_loss = std::stod(f[4]);
    trace.records.push_back(r);
  }
  return trace;
}

void LossTrace::write_csv(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << to_csv();
  if (!out) throw std::runtime_error("cannot write loss trace " + path.string());
}

PretrainData make_pretrain_data(std::uint64_t seed, std::size_t captions, std::size_t sentences, int caption_style,
                                int image_size) {
  PretrainData data;
  GenOptions opt;
  opt.image_size = image_size;
  opt.caption_style = caption_style;
  data.captions = gen_synthetic(TaskTag::caption, mix_seed(seed, 1 + caption_style), captions, opt);
  for (const auto& s : gen_text_corpus(seed, sentences, 0)) {
    if (!data.text_stream.empty()) data.text_stream += ' ';
    data.text_stream += s;
  }
  return data;
}

PretrainBatch build_pretrain_batch(const PretrainData& data, const StageConfig& cfg, std::int64_t step) {
  PretrainBatch batch;
  batch.step = step;
  Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(step)));
  if (cfg.caption_items > 0) {
    if (data.captions.empty()) throw std::invalid_argument("pretrain batch needs caption data");
    for (int i = 0; i < cfg.caption_items; ++i) batch.captions.push_back(rng.below(data.captions.size()));
  }
  if (cfg.text_tokens > 0) {
    const auto n = static_cast<std::size_t>(cfg.text_tokens);
    if (data.text_stream.size() < n)
      throw std::invalid_argument("text stream has " + std::to_string(data.text_stream.size()) + " bytes, batch needs " +
                                  std::to_string(n));
    const std::size_t offset = rng.below(data.text_stream.size() - n + 1);
    batch.text.push_back(1);
    for (auto id : encode_text(data.text_stream.substr(offset, n))) batch.text.push_back(id);
  }
  return batch;
}

std::vector<DatasetSpec> FinetuneData::specs() const {
  std::vector<DatasetSpec> out;
  for (std::size_t i = 0; i < datasets.size(); ++i)
    out.push_back({names.at(i), datasets[i].size(), 0,
                   datasets[i].empty() ? TaskTag::caption : datasets[i].front().sample.task});
  return out;
}

FinetuneData make_finetune_data(std::uint64_t seed, const std::vector<TaskTag>& tasks, std::size_t per_task,
                                int image_size) {
  FinetuneData data;
  GenOptions opt;
  opt.image_size = image_size;
  for (auto t : tasks) {
    data.names.push_back(to_string(t));
    data.datasets.push_back(gen_synthetic(t, seed, per_task, opt));
  }
  return data;
}

std::vector<SampleRef> build_finetune_batch(const FinetuneData& data, const StageConfig& cfg, std::int64_t step) {
  NaturalFrequencySampler sampler(data.specs(), mix_seed(cfg.seed, static_cast<std::uint64_t>(step)));
  std::vector<SampleRef> refs;
  for (int i = 0; i < cfg.samples; ++i) refs.push_back(sampler.next());
  return refs;
}

MixedSequence conversation_sequence(const MultimodalModel& model, const ConversationSample& sample,
                                    VisualCache* cache) {
  const auto& lm = model.config().lm;
  if (sample.task == TaskTag::text_only)
    return with_visual(model, nullptr, false, serialize_plain(sample.turns.at(0).text, lm.bos_token, lm.eos_token, true),
                       cache);
  return with_visual(model, sample.image.get(), false, serialize_conversation(sample, lm.bos_token, lm.eos_token),
                     cache);
}

MixedSequence caption_sequence(const MultimodalModel& model, const SyntheticSample& sample, VisualCache* cache) {
  const auto& lm = model.config().lm;
  if (!sample.sample.image) throw std::invalid_argument("caption sample has no image");
  const std::string& caption = sample.sample.turns.back().text;
  return with_visual(model, sample.sample.image.get(), true, serialize_plain(caption, lm.bos_token, lm.eos_token, true),
                     cache);
}

MixedSequence prompt_sequence(const MultimodalModel& model, const ImageTensor* image, const std::string& user_text,
                              VisualCache* cache) {
  TokenizedText t;
  t.ids = serialize_prompt(user_text, model.config().lm.bos_token);
  t.mask.assign(t.ids.size(), 0);
  return with_visual(model, image, false, std::move(t), cache);
}

StageResult train_stage(MultimodalModel& model, const StageConfig& cfg, const PretrainData& data, std::int64_t steps,
                        VisualCache* cache) {
  if (cfg.stage != StageKind::pretrain) throw std::invalid_argument("pretrain data given to a finetune stage");
  VisualCache local;
  if (!cache) cache = &local;
  return run_steps(model, cfg, steps, [&](std::int64_t step, TraceRecord& rec) {
    const PretrainBatch batch = build_pretrain_batch(data, cfg, step);
    Tensor total;
    if (!batch.captions.empty()) {
      std::vector<MixedSequence> seqs;
      for (auto i : batch.captions) seqs.push_back(caption_sequence(model, data.captions[i], cache));
      total = model.lm().batch_loss(seqs);
      rec.caption_loss = total.item();
    }
    if (!batch.text.empty()) {
      MixedSequence seq;
      seq.text_ids = batch.text;
      seq.loss_mask.assign(batch.text.size(), 1);
      seq.loss_mask[0] = 0;
      const Tensor t = model.lm().loss(seq);
      rec.text_loss = t.item();
      total = total.defined() ? ops::add(total, t) : t;
    }
    return total;
  });
}

StageResult train_stage(MultimodalModel& model, const StageConfig& cfg, const FinetuneData& data, std::int64_t steps,
                        VisualCache* cache) {
  if (cfg.stage != StageKind::finetune) throw std::invalid_argument("finetune data given to a pretrain stage");
  VisualCache local;
  if (!cache) cache = &local;
  return run_steps(model, cfg, steps, [&](std::int64_t step, TraceRecord&) {
    std::vector<MixedSequence> seqs;
    for (const auto& ref : build_finetune_batch(data, cfg, step))
      seqs.push_back(conversation_sequence(model, data.datasets[ref.dataset][ref.index].sample, cache));
    return model.lm().batch_loss(seqs);
  });
}

double text_loss(const MultimodalModel& model, const std::vector<std::string>& texts) {
  if (texts.empty()) throw std::invalid_argument("text_loss of an empty text set");
  NoGradGuard guard;
  std::vector<MixedSequence> seqs;
  const auto& lm = model.config().lm;
  for (const auto& t : texts) {
    auto tok = serialize_plain(t, lm.bos_token, lm.eos_token, true);
    seqs.push_back({Tensor(), std::move(tok.ids), std::move(tok.mask)});
  }
  return model.lm().batch_loss(seqs).item();
}

double caption_loss(const MultimodalModel& model, const std::vector<SyntheticSample>& samples, VisualCache* cache) {
  if (samples.empty()) throw std::invalid_argument("caption_loss of an empty sample set");
  NoGradGuard guard;
  std::vector<MixedSequence> seqs;
  for (const auto& s : samples) seqs.push_back(caption_sequence(model, s, cache));
  return model.lm().batch_loss(seqs).item();
}

TwoStageResult run_two_stage(const TwoStageConfig& cfg) {
  TwoStageResult result;
  MultimodalModel model(cfg.model);
  VisualCache cache;
  auto persist = [&](const StageResult& r, const std::string& name) {
    const auto path = cfg.out_dir / (name + ".mxck");
    save(r.checkpoint, path);
    r.trace.write_csv(cfg.out_dir / (name + ".csv"));
    result.checkpoints.push_back(path);
  };

  const PretrainData domain_a = make_pretrain_data(cfg.data_seed, cfg.caption_count, cfg.text_sentences, 0);
  StageConfig pre = cfg.pretrain;
  pre.stage = StageKind::pretrain;
  pre.tag = StageTag::pretrain_real;
  const StageResult a = train_stage(model, pre, domain_a, pre.schedule.total_steps, &cache);
  persist(a, "stage1_pretrain_real");

  if (cfg.mix) {
    const PretrainData domain_b = make_pretrain_data(cfg.data_seed, cfg.caption_count, cfg.text_sentences, 1);
    StageConfig cont = cfg.mix->continued;
    cont.stage = StageKind::pretrain;
    cont.tag = StageTag::pretrain_syn;
    const StageResult b = train_stage(model, cont, domain_b, cont.schedule.total_steps, &cache);
    persist(b, "stage1_pretrain_syn");
    StageResult mixed{mix_weights(a.checkpoint, b.checkpoint, cfg.mix->beta), {}};
    persist(mixed, "stage1_mixed");
    model.load_checkpoint(mixed.checkpoint);
  }

  const FinetuneData tasks = make_finetune_data(cfg.data_seed, cfg.tasks, cfg.per_task);
  StageConfig ft = cfg.finetune;
  ft.stage = StageKind::finetune;
  ft.tag = StageTag::finetuned;
  const StageResult f = train_stage(model, ft, tasks, ft.schedule.total_steps, &cache);
  persist(f, "stage2_finetuned");
  result.final_checkpoint = f.checkpoint;
  return result;
}

}  // namespace mixpipe
