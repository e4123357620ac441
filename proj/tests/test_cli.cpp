// Copyright 2026 The mixpipe Authors
// SPDX-License-Identifier: Apache-2.0

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <fstream>

#include "doctest.h"
#include "mixpipe/cli.hpp"
#include "mixpipe/config.hpp"
#include "mixpipe/eval.hpp"
#include "support.hpp"

using namespace mixpipe;
namespace fs = std::filesystem;

namespace {

// Runs the built binary; returns its exit status.
int run(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + (env.empty() ? "" : " ") + std::string(MIXPIPE_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

void write_text(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

const char* kPretrainConfig =
    "# two quick steps on the toy model\n"
    "train.total_steps = 2\n"
    "train.warmup_steps = 1\n"
    "train.caption_items = 1\n"
    "train.text_tokens = 16\n"
    "data.captions = 2\n"
    "data.sentences = 8\n";

}  // namespace

TEST_SUITE("config") {
  TEST_CASE("parsing rules") {
    const ConfigMap kv = parse_config("# c\n a = 1 \n\nb=x # tail\n");
    CHECK(kv == ConfigMap{{"a", "1"}, {"b", "x"}});
    CHECK(parse_config(format_config(kv)) == kv);
    CHECK_THROWS_WITH(parse_config("a=1\na=2\n"), doctest::Contains("duplicate key a"));
    CHECK_THROWS_WITH(parse_config("a=1\nnoequals\n"), doctest::Contains("line 2"));
    CHECK_THROWS(parse_config("=3\n"));
  }

  TEST_CASE("run config from a map") {
    const RunConfig rc = run_config_from_map(StageKind::pretrain, parse_config(kPretrainConfig), 9);
    CHECK(rc.steps == 2);
    CHECK(rc.stage.schedule.total_steps == 2);
    CHECK(rc.stage.seed == 9);
    CHECK(rc.data.seed == 9);
    CHECK(rc.data.captions == 2);
    CHECK(rc.model.digest() == toy_config().digest());
    const RunConfig ft = run_config_from_map(StageKind::finetune, {{"model.input_res", "64"}, {"train.seed", "3"}}, 9);
    CHECK(ft.model.input_res == 64);
    CHECK(ft.stage.seed == 3);
    CHECK(ft.stage.stage == StageKind::finetune);
    CHECK_THROWS_WITH(run_config_from_map(StageKind::pretrain, {{"train.bogus", "1"}}, std::nullopt),
                      doctest::Contains("train.bogus"));
    CHECK_THROWS(run_config_from_map(StageKind::pretrain, {{"train.steps", "5"}, {"train.total_steps", "2"}}, {}));
    CHECK_THROWS(run_config_from_map(StageKind::pretrain, {{"train.samples", "x"}}, {}));
    CHECK_THROWS(run_config_from_map(StageKind::pretrain, {{"train.trainable", "encoder."}}, {}));
  }
}

TEST_SUITE("cli") {
  TEST_CASE("usage errors exit 2") {
    CHECK(run("") == kExitUsage);
    CHECK(run("frobnicate") == kExitUsage);
    CHECK(run("tile") == kExitUsage);
    CHECK(run("--help") == 0);
    CHECK(cli_usage().find("gen-data") != std::string::npos);
  }

  TEST_CASE("mix-weights at beta 1 reproduces a byte for byte") {
    const auto dir = mixpipe::testing::scratch_dir("cli_mix");
    write_text(dir / "pre.cfg", kPretrainConfig);
    REQUIRE(run("pretrain --config " + q(dir / "pre.cfg") + " --seed 1 --out " + q(dir / "a.mxck")) == 0);
    REQUIRE(run("pretrain --config " + q(dir / "pre.cfg") + " --seed 2 --out " + q(dir / "b.mxck")) == 0);
    REQUIRE(run("mix-weights --a " + q(dir / "a.mxck") + " --b " + q(dir / "b.mxck") + " --beta 1 --out " +
                q(dir / "m.mxck")) == 0);
    const std::string a = mixpipe::testing::read_file(dir / "a.mxck");
    CHECK(!a.empty());
    CHECK(mixpipe::testing::read_file(dir / "m.mxck") == a);
    CHECK(run("mix-weights --a " + q(dir / "a.mxck") + " --b " + q(dir / "b.mxck") + " --beta 1.5 --out " +
              q(dir / "x.mxck")) == 1);
  }

  TEST_CASE("tile on a 448 pixmap writes five views and a plan") {
    const auto dir = mixpipe::testing::scratch_dir("cli_tile");
    ImageTensor img(448, 448, 0.0);
    for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<double>(i % 256) / 255.0;
    write_ppm(img, dir / "in.ppm");
    REQUIRE(run("tile --image " + q(dir / "in.ppm") + " --out " + q(dir / "views")) == 0);
    for (int i = 0; i < 5; ++i) {
      const ImageTensor v = read_ppm(dir / "views" / ("view_" + std::to_string(i) + ".ppm"));
      CHECK(v.height == 224);
      CHECK(v.width == 224);
    }
    CHECK_FALSE(fs::exists(dir / "views" / "view_5.ppm"));
    CHECK(fs::exists(dir / "views" / "plan.txt"));
  }

  TEST_CASE("seeded commands are byte-identical across runs") {
    const auto dir = mixpipe::testing::scratch_dir("cli_determinism");
    for (const char* sub : {"a", "b"}) {
      REQUIRE(run("gen-data --task rec --count 6 --seed 4 --out " + q(dir / sub / "m.jsonl")) == 0);
    }
    CHECK(mixpipe::testing::read_file(dir / "a" / "m.jsonl") == mixpipe::testing::read_file(dir / "b" / "m.jsonl"));
    CHECK(mixpipe::testing::read_file(dir / "a" / "img_000005.ppm") ==
          mixpipe::testing::read_file(dir / "b" / "img_000005.ppm"));
    REQUIRE(run("gen-data --task rec --count 6 --out " + q(dir / "env" / "m.jsonl"), "MIXPIPE_SEED=4") == 0);
    CHECK(mixpipe::testing::read_file(dir / "env" / "m.jsonl") == mixpipe::testing::read_file(dir / "a" / "m.jsonl"));

    write_text(dir / "pre.cfg", kPretrainConfig);
    for (const char* name : {"p1.mxck", "p2.mxck"})
      REQUIRE(run("pretrain --config " + q(dir / "pre.cfg") + " --seed 5 --out " + q(dir / name)) == 0);
    CHECK(mixpipe::testing::read_file(dir / "p1.mxck") == mixpipe::testing::read_file(dir / "p2.mxck"));
  }

  TEST_CASE("scalar and vector kernels train to the same weights") {
    const auto dir = mixpipe::testing::scratch_dir("cli_isa");
    write_text(dir / "pre.cfg", kPretrainConfig);
    REQUIRE(run("pretrain --config " + q(dir / "pre.cfg") + " --seed 3 --out " + q(dir / "v.mxck")) == 0);
    REQUIRE(run("pretrain --config " + q(dir / "pre.cfg") + " --seed 3 --out " + q(dir / "s.mxck"),
                "MIXPIPE_ISA=scalar") == 0);
    const Checkpoint v = load(dir / "v.mxck"), s = load(dir / "s.mxck");
    REQUIRE(v.entries.size() == s.entries.size());
    double worst = 0;
    for (const auto& [k, t] : v.entries) {
      const auto a = t.data(), b = s.entries.at(k).data();
      REQUIRE(a.size() == b.size());
      for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
    }
    CHECK(worst < 1e-9);
  }

  TEST_CASE("finetune, infer and eval run end to end") {
    const auto dir = mixpipe::testing::scratch_dir("cli_e2e");
    REQUIRE(run("gen-data --task vqa --count 4 --seed 2 --out " + q(dir / "vqa.jsonl")) == 0);
    write_text(dir / "ft.cfg", "train.total_steps = 2\ntrain.warmup_steps = 1\ntrain.samples = 2\ndata.manifest = " +
                                   (dir / "vqa.jsonl").string() + "\n");
    REQUIRE(run("finetune --config " + q(dir / "ft.cfg") + " --seed 1 --out " + q(dir / "ft.mxck") + " --trace " +
                q(dir / "ft.csv")) == 0);
    CHECK(LossTrace::from_csv(mixpipe::testing::read_file(dir / "ft.csv")).records.size() == 2);
    CHECK(load(dir / "ft.mxck").meta.stage_tag == StageTag::finetuned);
    CHECK(run("infer --ckpt " + q(dir / "ft.mxck") + " --image " + q(dir / "img_000000.ppm") +
              " --prompt 'How many shapes are there?' --max-new 4") == 0);
    REQUIRE(run("eval --ckpt " + q(dir / "ft.mxck") + " --task vqa --manifest " + q(dir / "vqa.jsonl") + " --out " +
                q(dir / "vqa.csv")) == 0);
    const EvalReport vqa = EvalReport::from_csv(mixpipe::testing::read_file(dir / "vqa.csv"));
    CHECK(vqa.metrics.at("vqa_exact_match").n == 4);
    REQUIRE(run("eval --ckpt " + q(dir / "ft.mxck") + " --task text --count 3 --seed 1 --out " + q(dir / "t.csv")) ==
            0);
    CHECK(EvalReport::from_csv(mixpipe::testing::read_file(dir / "t.csv")).metrics.at("text_perplexity").value >= 1.0);
    CHECK(run("eval --ckpt " + q(dir / "ft.mxck") + " --task rec --out " + q(dir / "r.csv")) == 1);
    CHECK(run("infer --ckpt " + q(dir / "missing.mxck") + " --prompt hi") == 1);
  }
}
