// Copyright 2026 The mixpipe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Line-oriented key=value run configuration. Keys are grouped by prefix:
// model.* / enc.<id>.* / lm.* build the ModelConfig, train.* the stage and
// data.* the generated training data.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mixpipe/model.hpp"
#include "mixpipe/task_data.hpp"
#include "mixpipe/trainer.hpp"

namespace mixpipe {

using ConfigMap = std::map<std::string, std::string>;

// '#' starts a comment; blank lines are skipped; whitespace around key and
// value is trimmed. Duplicate keys and lines without '=' are errors.
ConfigMap parse_config(const std::string& text);
ConfigMap load_config(const std::filesystem::path& path);
std::string format_config(const ConfigMap& kv);

struct DataConfig {
  std::uint64_t seed = 1;
  std::size_t captions = 64;
  std::size_t sentences = 256;
  int caption_style = 0;
  int image_size = 32;
  std::vector<TaskTag> tasks{TaskTag::caption, TaskTag::vqa, TaskTag::rec, TaskTag::detection};
  std::size_t per_task = 16;
  std::string manifest;  // finetune: read samples from this manifest instead
};

struct RunConfig {
  ModelConfig model;
  StageConfig stage;
  std::int64_t steps = 0;  // defaults to the schedule's total
  DataConfig data;
};

// MIXPIPE_SEED, when set to an unsigned integer.
std::optional<std::uint64_t> env_seed();

// Seeds absent from the map fall back to `default_seed` when given.
RunConfig run_config_from_map(StageKind kind, const ConfigMap& kv, std::optional<std::uint64_t> default_seed);

}  // namespace mixpipe
