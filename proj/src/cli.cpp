// Copyright 2026 The mixpipe Authors
// SPDX-License-Identifier: Apache-2.0

#include "mixpipe/cli.hpp"

#include <cstring>
#include <iostream>
#include <map>
#include <optional>

#include "CLI11.hpp"
#include "mixpipe/checkpoint.hpp"
#include "mixpipe/config.hpp"
#include "mixpipe/eval.hpp"
#include "mixpipe/hires_tiler.hpp"
#include "mixpipe/model.hpp"
#include "mixpipe/task_data.hpp"
#include "mixpipe/trainer.hpp"

namespace mixpipe {
namespace {

constexpr const char* kCommands[] = {"pretrain", "finetune", "mix-weights", "tile", "infer", "eval", "gen-data"};

std::uint64_t pick_seed(const std::optional<std::uint64_t>& flag) {
  if (flag) return *flag;
  return env_seed().value_or(1);
}

std::optional<std::uint64_t> config_seed(const std::optional<std::uint64_t>& flag) {
  if (flag) return flag;
  return env_seed();
}

ImageTensor square_image(const std::string& path) {
  const ImageTensor img = read_ppm(path);
  return img.square() ? img : pad_to_square(img);
}

MultimodalModel initial_model(const RunConfig& rc, const std::string& init) {
  if (init.empty()) return MultimodalModel(rc.model);
  return MultimodalModel::from_checkpoint(load(init));
}

void finish_stage(const StageResult& r, const std::string& out, const std::string& trace) {
  save(r.checkpoint, out);
  if (!trace.empty()) r.trace.write_csv(trace);
  std::cout << "wrote " << out << " (" << r.trace.records.size() << " steps";
  if (!r.trace.records.empty()) std::cout << ", final loss " << r.trace.records.back().total_loss;
  std::cout << ")\n";
}

FinetuneData manifest_data(const std::string& path) {
  FinetuneData data;
  std::map<TaskTag, std::size_t> slot;
  for (auto& s : read_manifest(path)) {
    const TaskTag t = s.sample.task;
    if (!slot.count(t)) {
      slot[t] = data.datasets.size();
      data.names.push_back(to_string(t));
      data.datasets.emplace_back();
    }
    data.datasets[slot[t]].push_back(std::move(s));
  }
  if (data.datasets.empty()) throw std::invalid_argument("manifest " + path + " holds no samples");
  return data;
}

}  // namespace

std::string cli_usage() {
  return "usage: mixpipe <command> [options]\n"
         "commands:\n"
         "  pretrain     stage-1 training from a key=value config\n"
         "  finetune     stage-2 training on mixed tasks\n"
         "  mix-weights  convex mix of two checkpoints\n"
         "  tile         split a pixmap into the global view and crops\n"
         "  infer        answer a prompt about an image\n"
         "  eval         score a checkpoint on a manifest\n"
         "  gen-data     write a synthetic dataset manifest\n"
         "run 'mixpipe <command> --help' for options\n";
}

int run_cli(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << cli_usage();
    return kExitUsage;
  }
  const std::string first = argv[1];
  bool known = first == "-h" || first == "--help";
  for (const char* c : kCommands) known = known || first == c;
  if (!known) {
    std::cerr << "unknown command '" << first << "'\n" << cli_usage();
    return kExitUsage;
  }

  CLI::App app{"Joint-mixing multimodal training at desk scale", "mixpipe"};
  app.require_subcommand(1);

  std::string config, out, trace, init, ckpt_a, ckpt_b, image, prompt, manifest, task, ckpt;
  std::optional<std::uint64_t> seed;
  std::optional<std::int64_t> steps;
  double beta = -1;
  int base = 224, max_new = 64, image_size = 32, caption_style = 0;
  std::size_t count = 16;

  auto* pre = app.add_subcommand("pretrain", "stage-1 training");
  pre->add_option("--config", config, "key=value config file")->required();
  pre->add_option("--out", out, "checkpoint to write")->required();
  pre->add_option("--trace", trace, "loss trace CSV");
  pre->add_option("--init", init, "start from this checkpoint");
  pre->add_option("--seed", seed, "seed for batches and data (default MIXPIPE_SEED)");
  pre->add_option("--steps", steps, "override train.steps");

  auto* ft = app.add_subcommand("finetune", "stage-2 training");
  ft->add_option("--config", config, "key=value config file")->required();
  ft->add_option("--out", out, "checkpoint to write")->required();
  ft->add_option("--trace", trace, "loss trace CSV");
  ft->add_option("--init", init, "start from this checkpoint");
  ft->add_option("--seed", seed, "seed for batches and data (default MIXPIPE_SEED)");
  ft->add_option("--steps", steps, "override train.steps");

  auto* mix = app.add_subcommand("mix-weights", "beta * a + (1 - beta) * b");
  mix->add_option("--a", ckpt_a, "first checkpoint")->required();
  mix->add_option("--b", ckpt_b, "second checkpoint")->required();
  mix->add_option("--beta", beta, "weight of a, in [0, 1]")->required();
  mix->add_option("--out", out, "checkpoint to write")->required();

  auto* tile = app.add_subcommand("tile", "global view plus base-resolution crops");
  tile->add_option("--image", image, "P6 pixmap")->required();
  tile->add_option("--out", out, "output directory")->required();
  tile->add_option("--base", base, "base resolution")->capture_default_str();

  auto* inf = app.add_subcommand("infer", "greedy answer to a prompt");
  inf->add_option("--ckpt", ckpt, "checkpoint")->required();
  inf->add_option("--image", image, "P6 pixmap");
  inf->add_option("--prompt", prompt, "user text")->required();
  inf->add_option("--max-new", max_new, "generation budget")->capture_default_str();

  auto* ev = app.add_subcommand("eval", "score a checkpoint");
  ev->add_option("--ckpt", ckpt, "checkpoint")->required();
  ev->add_option("--task", task, "rec | vqa | probe | text")->required();
  ev->add_option("--manifest", manifest, "dataset manifest (rec, vqa, probe)");
  ev->add_option("--count", count, "held-out sentences (text)")->capture_default_str();
  ev->add_option("--seed", seed, "held-out text seed (default MIXPIPE_SEED)");
  ev->add_option("--out", out, "report CSV")->required();

  auto* gen = app.add_subcommand("gen-data", "synthetic dataset");
  gen->add_option("--task", task, "task tag, or 'marker' for the high-resolution probe")->required();
  gen->add_option("--count", count, "samples")->capture_default_str();
  gen->add_option("--seed", seed, "generator seed (default MIXPIPE_SEED)");
  gen->add_option("--image-size", image_size, "image side")->capture_default_str();
  gen->add_option("--caption-style", caption_style, "caption domain 0 or 1")->capture_default_str();
  gen->add_option("--out", out, "manifest path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (pre->parsed() || ft->parsed()) {
      const StageKind kind = pre->parsed() ? StageKind::pretrain : StageKind::finetune;
      RunConfig rc = run_config_from_map(kind, load_config(config), config_seed(seed));
      if (steps) {
        if (*steps < 0 || *steps > rc.stage.schedule.total_steps)
          throw std::invalid_argument("--steps must lie in [0, train.total_steps]");
        rc.steps = *steps;
      }
      MultimodalModel model = initial_model(rc, init);
      VisualCache cache;
      if (kind == StageKind::pretrain) {
        const PretrainData data = make_pretrain_data(rc.data.seed, rc.data.captions, rc.data.sentences,
                                                     rc.data.caption_style, rc.data.image_size);
        finish_stage(train_stage(model, rc.stage, data, rc.steps, &cache), out, trace);
      } else {
        const FinetuneData data = rc.data.manifest.empty()
                                      ? make_finetune_data(rc.data.seed, rc.data.tasks, rc.data.per_task,
                                                           rc.data.image_size)
                                      : manifest_data(rc.data.manifest);
        finish_stage(train_stage(model, rc.stage, data, rc.steps, &cache), out, trace);
      }
    } else if (mix->parsed()) {
      save(mix_weights(load(ckpt_a), load(ckpt_b), beta), out);
      std::cout << "wrote " << out << "\n";
    } else if (tile->parsed()) {
      const ImageTensor img = square_image(image);
      const TilingPlan plan = make_plan(img.height, base);
      write_views(apply_plan(img, plan), plan, out);
      std::cout << plan.views.size() << " views written to " << out << "\n";
    } else if (inf->parsed()) {
      const MultimodalModel model = MultimodalModel::from_checkpoint(load(ckpt));
      std::optional<ImageTensor> img;
      if (!image.empty()) img = square_image(image);
      std::cout << generate_response(model, img ? &*img : nullptr, prompt, max_new, nullptr) << "\n";
    } else if (ev->parsed()) {
      const MultimodalModel model = MultimodalModel::from_checkpoint(load(ckpt));
      const std::string digest = model.config().digest();
      EvalReport report;
      VisualCache cache;
      if (task == "text") {
        const auto texts = gen_text_corpus(pick_seed(seed), count, 1);
        report.add("text_perplexity", text_perplexity(model, texts), texts.size(), digest);
      } else {
        if (manifest.empty()) throw std::invalid_argument("--manifest is required for task " + task);
        const auto samples = read_manifest(manifest);
        if (task == "rec") {
          const ScoreResult r = rec_accuracy(model, samples, &cache);
          report.add("rec_accuracy", r.accuracy, r.n, digest);
          report.add("rec_parse_failure_rate", r.parse_failure_rate, r.n, digest);
        } else if (task == "vqa") {
          const ScoreResult r = vqa_exact_match(model, samples, &cache);
          report.add("vqa_exact_match", r.accuracy, r.n, digest);
        } else if (task == "probe") {
          const ScoreResult r = probe_accuracy(model, samples, &cache);
          report.add("probe_accuracy", r.accuracy, r.n, digest);
        } else {
          throw std::invalid_argument("unknown eval task '" + task + "'");
        }
      }
      report.write_csv(out);
      std::cout << report.to_csv();
    } else if (gen->parsed()) {
      const std::uint64_t s = pick_seed(seed);
      std::vector<SyntheticSample> samples;
      if (task == "marker") {
        samples = gen_marker_probe(s, count);
      } else {
        GenOptions opt;
        opt.image_size = image_size;
        opt.caption_style = caption_style;
        samples = gen_synthetic(parse_task_tag(task), s, count, opt);
      }
      write_manifest(samples, out);
      std::cout << samples.size() << " samples written to " << out << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace mixpipe
