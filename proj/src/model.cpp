// Copyright 2026 The mixpipe Authors
// SPDX-License-Identifier: Apache-2.0

#include "mixpipe/model.hpp"

#include <cstdio>
#include <cstring>
#include <sstream>
#include <stdexcept>

#include "mixpipe/random.hpp"

namespace mixpipe {
namespace {

std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep))
    if (!cur.empty()) out.push_back(cur);
  return out;
}

int to_int(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  int out = 0;
  try {
    out = std::stoi(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) throw std::invalid_argument("config key " + key + ": '" + v + "' is not an integer");
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos)
    throw std::invalid_argument("config key " + key + ": '" + v + "' is not a non-negative integer");
  return std::stoull(v);
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("config key " + key + ": '" + v + "' is not a boolean");
}

void put_encoder(std::map<std::string, std::string>& kv, const EncoderConfig& e) {
  const std::string p = "enc." + e.id + ".";
  kv[p + "kind"] = to_string(e.kind);
  kv[p + "input_size"] = std::to_string(e.input_size);
  kv[p + "patch_size"] = std::to_string(e.patch_size);
  kv[p + "strides"] = join_ints(e.stride_schedule);
  kv[p + "dim"] = std::to_string(e.dim);
  kv[p + "depth"] = std::to_string(e.depth);
  kv[p + "heads"] = std::to_string(e.heads);
  kv[p + "num_queries"] = std::to_string(e.num_queries);
  kv[p + "input_dim"] = std::to_string(e.input_dim);
  kv[p + "cls_token"] = e.cls_token ? "true" : "false";
  kv[p + "frozen"] = e.frozen ? "true" : "false";
  kv[p + "seed"] = std::to_string(e.seed);
}

bool set_encoder_field(EncoderConfig& e, const std::string& field, const std::string& key, const std::string& v) {
  if (field == "kind")
    e.kind = parse_encoder_kind(v);
  else if (field == "input_size")
    e.input_size = to_int(key, v);
  else if (field == "patch_size")
    e.patch_size = to_int(key, v);
  else if (field == "strides") {
    e.stride_schedule.clear();
    for (const auto& s : split(v, ',')) e.stride_schedule.push_back(to_int(key, s));
  } else if (field == "dim")
    e.dim = to_int(key, v);
  else if (field == "depth")
    e.depth = to_int(key, v);
  else if (field == "heads")
    e.heads = to_int(key, v);
  else if (field == "num_queries")
    e.num_queries = to_int(key, v);
  else if (field == "input_dim")
    e.input_dim = to_int(key, v);
  else if (field == "cls_token")
    e.cls_token = to_bool(key, v);
  else if (field == "frozen")
    e.frozen = to_bool(key, v);
  else if (field == "seed")
    e.seed = to_u64(key, v);
  else
    return false;
  return true;
}

}  // namespace

void ModelConfig::validate() const {
  if (patch_encoders.empty()) throw std::invalid_argument("model needs at least one patch-level encoder");
  if (base_res < 1 || input_res < base_res)
    throw std::invalid_argument("model input_res " + std::to_string(input_res) + " must be >= base_res " +
                                std::to_string(base_res));
  const std::size_t count = patch_encoders.front().token_count();
  bool found_input = false;
  for (const auto& e : patch_encoders) {
    e.validate();
    if (e.kind == EncoderKind::query) throw std::invalid_argument("encoder '" + e.id + "' is a query encoder");
    if (e.input_size != base_res)
      throw std::invalid_argument("encoder '" + e.id + "' input_size " + std::to_string(e.input_size) +
                                  " differs from base_res " + std::to_string(base_res));
    if (e.token_count() != count)
      throw std::invalid_argument("encoder '" + e.id + "' emits " + std::to_string(e.token_count()) +
                                  " tokens but '" + patch_encoders.front().id + "' emits " + std::to_string(count) +
                                  "; channel concatenation needs aligned grids");
    for (const auto& o : patch_encoders)
      if (&o != &e && o.id == e.id) throw std::invalid_argument("duplicate encoder id '" + e.id + "'");
    if (e.id == query_input) {
      found_input = true;
      if (e.dim != query_encoder.input_dim)
        throw std::invalid_argument("query encoder input_dim " + std::to_string(query_encoder.input_dim) +
                                    " differs from '" + e.id + "' width " + std::to_string(e.dim));
    }
  }
  query_encoder.validate();
  if (query_encoder.kind != EncoderKind::query)
    throw std::invalid_argument("encoder '" + query_encoder.id + "' must be of query kind");
  if (!found_input) throw std::invalid_argument("query input '" + query_input + "' is not a patch encoder");
  lm.validate();
  if (visual_tokens() >= static_cast<std::size_t>(lm.max_seq_len))
    throw std::invalid_argument(std::to_string(visual_tokens()) + " visual tokens leave no room in max_seq_len " +
                                std::to_string(lm.max_seq_len));
}

std::size_t ModelConfig::tokens_per_group() const {
  return patch_encoders.front().token_count() + query_encoder.token_count();
}

std::size_t ModelConfig::views() const { return make_plan(input_res, base_res).views.size(); }

std::map<std::string, std::string> ModelConfig::to_map() const {
  std::map<std::string, std::string> kv;
  std::string ids;
  for (const auto& e : patch_encoders) {
    ids += (ids.empty() ? "" : ",") + e.id;
    put_encoder(kv, e);
  }
  put_encoder(kv, query_encoder);
  kv["model.patch_encoders"] = ids;
  kv["model.query_encoder"] = query_encoder.id;
  kv["model.query_input"] = query_input;
  kv["model.base_res"] = std::to_string(base_res);
  kv["model.input_res"] = std::to_string(input_res);
  kv["model.mixer_seed"] = std::to_string(mixer_seed);
  kv["lm.vocab_size"] = std::to_string(lm.vocab_size);
  kv["lm.dim"] = std::to_string(lm.dim);
  kv["lm.depth"] = std::to_string(lm.depth);
  kv["lm.heads"] = std::to_string(lm.heads);
  kv["lm.max_seq_len"] = std::to_string(lm.max_seq_len);
  kv["lm.pad_token"] = std::to_string(lm.pad_token);
  kv["lm.bos_token"] = std::to_string(lm.bos_token);
  kv["lm.eos_token"] = std::to_string(lm.eos_token);
  kv["lm.seed"] = std::to_string(lm.seed);
  return kv;
}

ModelConfig ModelConfig::from_map(const std::map<std::string, std::string>& kv) {
  ModelConfig cfg = toy_config();
  std::map<std::string, EncoderConfig> pool;
  for (const auto& e : cfg.patch_encoders) pool[e.id] = e;
  pool[cfg.query_encoder.id] = cfg.query_encoder;
  std::vector<std::string> patch_ids;
  for (const auto& e : cfg.patch_encoders) patch_ids.push_back(e.id);
  std::string query_id = cfg.query_encoder.id;

  for (const auto& [k, v] : kv) {
    if (k == "model.patch_encoders")
      patch_ids = split(v, ',');
    else if (k == "model.query_encoder")
      query_id = v;
  }
  for (const auto& [k, v] : kv) {
    if (k == "model.patch_encoders" || k == "model.query_encoder") continue;
    if (k == "model.query_input")
      cfg.query_input = v;
    else if (k == "model.base_res")
      cfg.base_res = to_int(k, v);
    else if (k == "model.input_res")
      cfg.input_res = to_int(k, v);
    else if (k == "model.mixer_seed")
      cfg.mixer_seed = to_u64(k, v);
    else if (k == "lm.vocab_size")
      cfg.lm.vocab_size = to_int(k, v);
    else if (k == "lm.dim")
      cfg.lm.dim = to_int(k, v);
    else if (k == "lm.depth")
      cfg.lm.depth = to_int(k, v);
    else if (k == "lm.heads")
      cfg.lm.heads = to_int(k, v);
    else if (k == "lm.max_seq_len")
      cfg.lm.max_seq_len = to_int(k, v);
    else if (k == "lm.pad_token")
      cfg.lm.pad_token = to_int(k, v);
    else if (k == "lm.bos_token")
      cfg.lm.bos_token = to_int(k, v);
    else if (k == "lm.eos_token")
      cfg.lm.eos_token = to_int(k, v);
    else if (k == "lm.seed")
      cfg.lm.seed = to_u64(k, v);
    else if (k.rfind("enc.", 0) == 0) {
      const auto dot = k.find('.', 4);
      if (dot == std::string::npos) throw std::invalid_argument("malformed encoder key " + k);
      const std::string id = k.substr(4, dot - 4);
      auto [it, inserted] = pool.try_emplace(id);
      if (inserted) it->second.id = id;
      if (!set_encoder_field(it->second, k.substr(dot + 1), k, v))
        throw std::invalid_argument("unknown encoder field in key " + k);
    } else {
      throw std::invalid_argument("unknown model config key " + k);
    }
  }
  cfg.patch_encoders.clear();
  for (const auto& id : patch_ids) {
    auto it = pool.find(id);
    if (it == pool.end()) throw std::invalid_argument("no settings for encoder '" + id + "'");
    cfg.patch_encoders.push_back(it->second);
  }
  auto q = pool.find(query_id);
  if (q == pool.end()) throw std::invalid_argument("no settings for query encoder '" + query_id + "'");
  cfg.query_encoder = q->second;
  cfg.validate();
  return cfg;
}

std::string ModelConfig::digest() const {
  std::string canon;
  for (const auto& [k, v] : to_map()) canon += k + "=" + v + "\n";
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash_string(canon)));
  return buf;
}

ModelConfig toy_config() {
  ModelConfig cfg;
  EncoderConfig vit_a;
  vit_a.id = "vit_a";
  vit_a.seed = 11;
  EncoderConfig vit_b = vit_a;
  vit_b.id = "vit_b";
  vit_b.seed = 23;
  EncoderConfig conv;
  conv.id = "conv";
  conv.kind = EncoderKind::conv;
  conv.stride_schedule = {4, 2};
  conv.seed = 37;
  EncoderConfig q;
  q.id = "qformer";
  q.kind = EncoderKind::query;
  q.num_queries = 4;
  q.input_dim = vit_a.dim;
  q.cls_token = false;
  q.seed = 41;
  cfg.patch_encoders = {vit_a, vit_b, conv};
  cfg.query_encoder = q;
  cfg.query_input = "vit_a";
  cfg.base_res = 32;
  cfg.input_res = 32;
  cfg.validate();
  return cfg;
}

ModelConfig full_scale_config(int input_res) {
  ModelConfig cfg = toy_config();
  for (auto& e : cfg.patch_encoders) {
    e.input_size = 224;
    e.patch_size = 14;
    e.stride_schedule = {7, 2};
    e.dim = 4;
    e.depth = 0;
    e.heads = 1;
  }
  cfg.query_encoder.num_queries = 32;
  cfg.query_encoder.input_dim = 4;
  cfg.query_encoder.dim = 4;
  cfg.query_encoder.heads = 1;
  cfg.base_res = 224;
  cfg.input_res = input_res;
  cfg.lm.dim = 8;
  cfg.lm.depth = 0;
  cfg.lm.heads = 1;
  cfg.lm.max_seq_len = 4096;
  cfg.validate();
  return cfg;
}

MultimodalModel::MultimodalModel(ModelConfig cfg)
    : cfg_((cfg.validate(), std::move(cfg))),
      plan_(make_plan(cfg_.input_res, cfg_.base_res, static_cast<int>(cfg_.tokens_per_group()))),
      lm_(cfg_.lm) {
  std::vector<std::string> ids;
  std::vector<std::size_t> dims;
  for (const auto& e : cfg_.patch_encoders) {
    encoders_.emplace(e.id, std::make_unique<Encoder>(e));
    ids.push_back(e.id);
    dims.push_back(static_cast<std::size_t>(e.dim));
  }
  encoders_.emplace(cfg_.query_encoder.id, std::make_unique<Encoder>(cfg_.query_encoder));
  layout_ = make_layout(ids, dims, cfg_.query_encoder.id, static_cast<std::size_t>(cfg_.query_encoder.dim),
                        static_cast<std::size_t>(cfg_.lm.dim), cfg_.mixer_seed);
  for (const auto& [_, enc] : encoders_)
    for (const auto& [k, t] : enc->params()) params_.emplace(k, t);
  for (const auto& [k, t] : layout_.params()) params_.emplace(k, t);
  for (const auto& [k, t] : lm_.params()) params_.emplace(k, t);
  set_trainable({kMixerPrefix, kLmPrefix});
  for (const auto& e : cfg_.patch_encoders)
    if (!e.frozen) encoders_.at(e.id)->set_requires_grad(true);
  if (!cfg_.query_encoder.frozen) encoders_.at(cfg_.query_encoder.id)->set_requires_grad(true);
}

const Encoder& MultimodalModel::encoder(const std::string& id) const {
  auto it = encoders_.find(id);
  if (it == encoders_.end()) throw std::invalid_argument("model has no encoder '" + id + "'");
  return *it->second;
}

EncodedImage MultimodalModel::encode(const ImageTensor& img, bool global_only) const {
  img.validate();
  const ImageTensor sized =
      img.square() && img.height == cfg_.input_res ? img : resample(img, cfg_.input_res);
  const std::vector<ImageTensor> views =
      global_only ? std::vector<ImageTensor>{resample(sized, cfg_.base_res)} : apply_plan(sized, plan_);
  EncodedImage out;
  const Encoder& q = encoder(cfg_.query_encoder.id);
  for (std::size_t v = 0; v < views.size(); ++v) {
    const std::string tag = v == 0 ? "global" : "crop";
    EncodedView ev;
    for (const auto& e : cfg_.patch_encoders)
      ev.patch.push_back(encoder(e.id).encode(views[v], tag, static_cast<int>(v)));
    const TokenGroup* query_input = nullptr;
    for (const auto& g : ev.patch)
      if (g.provenance.encoder_id == cfg_.query_input) query_input = &g;
    ev.query = q.encode_tokens(*query_input);
    out.push_back(std::move(ev));
  }
  return out;
}

TokenGroup MultimodalModel::mix(const EncodedImage& encoded) const {
  std::vector<TokenGroup> groups;
  groups.reserve(encoded.size());
  for (const auto& ev : encoded) groups.push_back(mix_group(ev.patch, ev.query, layout_));
  return concat_groups(groups);
}

void MultimodalModel::set_trainable(const std::vector<std::string>& prefixes) {
  for (auto& [k, t] : params_) {
    bool on = false;
    for (const auto& p : prefixes) on = on || k.rfind(p, 0) == 0;
    if (t.requires_grad() != on) t.set_requires_grad(on);
  }
}

Checkpoint MultimodalModel::to_checkpoint(StageTag tag, std::int64_t step) const {
  Checkpoint c;
  for (const auto& [k, t] : params_) c.entries.emplace(k, t.detach());
  c.meta.stage_tag = tag;
  c.meta.step = step;
  c.meta.config = cfg_.to_map();
  c.meta.config_digest = cfg_.digest();
  return c;
}

void MultimodalModel::load_checkpoint(const Checkpoint& ckpt) {
  if (!ckpt.meta.config_digest.empty() && ckpt.meta.config_digest != cfg_.digest())
    throw std::invalid_argument("checkpoint config digest " + ckpt.meta.config_digest + " does not match model " +
                                cfg_.digest());
  if (ckpt.entries.size() != params_.size())
    throw std::invalid_argument("checkpoint has " + std::to_string(ckpt.entries.size()) + " entries, model has " +
                                std::to_string(params_.size()));
  for (auto& [k, t] : params_) {
    auto it = ckpt.entries.find(k);
    if (it == ckpt.entries.end()) throw std::invalid_argument("checkpoint is missing key " + k);
    if (it->second.shape() != t.shape())
      throw ShapeError("checkpoint shape " + shape_str(it->second.shape()) + " for " + k + ", model has " +
                       shape_str(t.shape()));
  }
  for (auto& [k, t] : params_) {
    const auto src = ckpt.entries.at(k).data();
    std::memcpy(t.data().data(), src.data(), src.size_bytes());
  }
}

MultimodalModel MultimodalModel::from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.meta.config.empty()) throw std::invalid_argument("checkpoint carries no model config");
  MultimodalModel m(ModelConfig::from_map(ckpt.meta.config));
  m.load_checkpoint(ckpt);
  return m;
}

const EncodedImage& VisualCache::get(const MultimodalModel& model, const ImageTensor& img, bool global_only) {
  bool frozen = true;
  for (const auto& [k, t] : model.params())
    if (k.rfind(kEncoderPrefix, 0) == 0 && t.requires_grad()) frozen = false;
  if (!frozen) {
    scratch_ = model.encode(img, global_only);
    return scratch_;
  }
  const auto key = std::make_tuple(&model, &img, global_only);
  auto it = entries_.find(key);
  if (it == entries_.end()) {
    NoGradGuard guard;
    it = entries_.emplace(key, model.encode(img, global_only)).first;
  }
  return it->second;
}

TokenGroup visual_tokens(const MultimodalModel& model, const ImageTensor& img, bool global_only,
                         VisualCache* cache) {
  if (cache) return model.mix(cache->get(model, img, global_only));
  return model.mix(model.encode(img, global_only));
}

}  // namespace mixpipe
