// Copyright 2026 The mixpipe Authors
// SPDX-License-Identifier: Apache-2.0

#include "mixpipe/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace mixpipe {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  unsigned long long x = 0;
  try {
    if (!v.empty() && v[0] == '-') throw std::invalid_argument(v);
    x = std::stoull(v, &pos);
  } catch (const std::exception&) {
    pos = std::string::npos;
  }
  if (pos != v.size()) throw std::invalid_argument("config " + key + ": '" + v + "' is not an unsigned integer");
  return x;
}

std::int64_t to_i64(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  long long x = 0;
  try {
    x = std::stoll(v, &pos);
  } catch (const std::exception&) {
    pos = std::string::npos;
  }
  if (pos != v.size()) throw std::invalid_argument("config " + key + ": '" + v + "' is not an integer");
  return x;
}

double to_double(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double x = 0;
  try {
    x = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = std::string::npos;
  }
  if (pos != v.size()) throw std::invalid_argument("config " + key + ": '" + v + "' is not a number");
  return x;
}

bool is_model_key(const std::string& k) {
  return k.rfind("model.", 0) == 0 || k.rfind("enc.", 0) == 0 || k.rfind("lm.", 0) == 0;
}

}  // namespace

ConfigMap parse_config(const std::string& text) {
  ConfigMap kv;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("config line " + std::to_string(lineno) + ": missing '='");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw std::invalid_argument("config line " + std::to_string(lineno) + ": empty key");
    if (!kv.emplace(key, trim(line.substr(eq + 1))).second)
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": duplicate key " + key);
  }
  return kv;
}

ConfigMap load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string format_config(const ConfigMap& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

std::optional<std::uint64_t> env_seed() {
  const char* s = std::getenv("MIXPIPE_SEED");
  if (!s || !*s) return std::nullopt;
  return to_u64("MIXPIPE_SEED", s);
}

RunConfig run_config_from_map(StageKind kind, const ConfigMap& kv, std::optional<std::uint64_t> default_seed) {
  RunConfig rc;
  if (kind == StageKind::finetune) rc.stage = finetune_defaults();
  rc.stage.stage = kind;
  if (default_seed) {
    rc.stage.seed = *default_seed;
    rc.data.seed = *default_seed;
  }
  ConfigMap model_kv;
  std::optional<std::int64_t> steps;
  for (const auto& [k, v] : kv) {
    if (is_model_key(k)) {
      model_kv[k] = v;
    } else if (k == "train.steps") {
      steps = to_i64(k, v);
    } else if (k == "train.peak_lr") {
      rc.stage.schedule.peak_lr = to_double(k, v);
    } else if (k == "train.final_lr") {
      rc.stage.schedule.final_lr = to_double(k, v);
    } else if (k == "train.warmup_steps") {
      rc.stage.schedule.warmup_steps = to_i64(k, v);
    } else if (k == "train.total_steps") {
      rc.stage.schedule.total_steps = to_i64(k, v);
    } else if (k == "train.schedule") {
      rc.stage.schedule.shape = parse_schedule_shape(v);
    } else if (k == "train.caption_items") {
      rc.stage.caption_items = static_cast<int>(to_i64(k, v));
    } else if (k == "train.text_tokens") {
      rc.stage.text_tokens = static_cast<int>(to_i64(k, v));
    } else if (k == "train.samples") {
      rc.stage.samples = static_cast<int>(to_i64(k, v));
    } else if (k == "train.seed") {
      rc.stage.seed = to_u64(k, v);
    } else if (k == "train.beta1") {
      rc.stage.hyper.beta1 = to_double(k, v);
    } else if (k == "train.beta2") {
      rc.stage.hyper.beta2 = to_double(k, v);
    } else if (k == "train.eps") {
      rc.stage.hyper.eps = to_double(k, v);
    } else if (k == "train.weight_decay") {
      rc.stage.hyper.weight_decay = to_double(k, v);
    } else if (k == "train.trainable") {
      rc.stage.trainable = split_list(v);
    } else if (k == "train.tag") {
      rc.stage.tag = parse_stage_tag(v);
    } else if (k == "data.seed") {
      rc.data.seed = to_u64(k, v);
    } else if (k == "data.captions") {
      rc.data.captions = to_u64(k, v);
    } else if (k == "data.sentences") {
      rc.data.sentences = to_u64(k, v);
    } else if (k == "data.caption_style") {
      rc.data.caption_style = static_cast<int>(to_i64(k, v));
    } else if (k == "data.image_size") {
      rc.data.image_size = static_cast<int>(to_i64(k, v));
    } else if (k == "data.tasks") {
      rc.data.tasks.clear();
      for (const auto& t : split_list(v)) rc.data.tasks.push_back(parse_task_tag(t));
    } else if (k == "data.per_task") {
      rc.data.per_task = to_u64(k, v);
    } else if (k == "data.manifest") {
      rc.data.manifest = v;
    } else {
      throw std::invalid_argument("unknown config key '" + k + "'");
    }
  }
  rc.model = ModelConfig::from_map(model_kv);
  rc.model.validate();
  rc.steps = steps.value_or(rc.stage.schedule.total_steps);
  rc.stage.validate();
  if (rc.steps < 0 || rc.steps > rc.stage.schedule.total_steps)
    throw std::invalid_argument("train.steps must lie in [0, train.total_steps]");
  return rc;
}

}  // namespace mixpipe
