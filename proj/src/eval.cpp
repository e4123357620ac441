// Copyright 2026 The mixpipe Authors
// SPDX-License-Identifier: Apache-2.0

#include "mixpipe/eval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "mixpipe/trainer.hpp"

namespace mixpipe {
namespace {

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

ScoreResult finish(double hits, double failures, std::size_t n) {
  if (n == 0) throw std::invalid_argument("cannot score an empty sample set");
  return {hits / static_cast<double>(n), failures / static_cast<double>(n), n};
}

const std::string& assistant_text(const SyntheticSample& s) {
  const auto& turns = s.sample.turns;
  if (turns.size() < 2 || turns.back().role != Role::assistant)
    throw std::invalid_argument("sample has no assistant answer");
  return turns.back().text;
}

}  // namespace

double iou(const BBox& a, const BBox& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  const double uni = (a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter;
  return inter / uni;
}

ScoreResult rec_accuracy(const std::vector<std::string>& outputs, const std::vector<BBox>& truth) {
  if (outputs.size() != truth.size())
    throw std::invalid_argument("rec_accuracy: " + std::to_string(outputs.size()) + " outputs for " +
                                std::to_string(truth.size()) + " truths");
  double hits = 0, failures = 0;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    const auto box = find_first_bbox(outputs[i]);
    if (!box) {
      failures += 1;
      continue;
    }
    if (iou(*box, truth[i]) >= 0.5) hits += 1;
  }
  return finish(hits, failures, outputs.size());
}

std::string normalize_answer(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  if (e > b && s[e - 1] == '.') --e;
  std::string out = s.substr(b, e - b);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

ScoreResult vqa_exact_match(const std::vector<std::string>& outputs, const std::vector<std::string>& truth) {
  if (outputs.size() != truth.size())
    throw std::invalid_argument("vqa_exact_match: " + std::to_string(outputs.size()) + " outputs for " +
                                std::to_string(truth.size()) + " truths");
  double hits = 0;
  for (std::size_t i = 0; i < outputs.size(); ++i)
    if (normalize_answer(outputs[i]) == normalize_answer(truth[i])) hits += 1;
  return finish(hits, 0, outputs.size());
}

std::string generate_response(const MultimodalModel& model, const ImageTensor* image, const std::string& user_text,
                              int max_new, VisualCache* cache) {
  NoGradGuard guard;
  const MixedSequence prefix = prompt_sequence(model, image, user_text, cache);
  return decode_text(model.lm().generate(prefix, max_new));
}

std::vector<std::string> generate_responses(const MultimodalModel& model, const std::vector<SyntheticSample>& samples,
                                            int max_new, VisualCache* cache) {
  std::vector<std::string> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    const auto& turns = s.sample.turns;
    if (turns.empty() || turns.front().role != Role::user) throw std::invalid_argument("sample has no user turn");
    const std::string& question = turns.size() >= 2 ? turns[turns.size() - 2].text : turns.front().text;
    out.push_back(generate_response(model, s.sample.image.get(), question, max_new, cache));
  }
  return out;
}

BBox rec_truth(const SyntheticSample& s) {
  const Annotation& a = s.annotation;
  if (a.target < 0 || a.target >= static_cast<int>(a.shapes.size()))
    throw std::invalid_argument("rec sample has no target shape");
  return a.shapes[a.target].box;
}

ScoreResult rec_accuracy(const MultimodalModel& model, const std::vector<SyntheticSample>& samples,
                         VisualCache* cache) {
  std::vector<BBox> truth;
  for (const auto& s : samples) truth.push_back(rec_truth(s));
  return rec_accuracy(generate_responses(model, samples, 40, cache), truth);
}

ScoreResult vqa_exact_match(const MultimodalModel& model, const std::vector<SyntheticSample>& samples,
                            VisualCache* cache) {
  std::vector<std::string> truth;
  for (const auto& s : samples) truth.push_back(assistant_text(s));
  return vqa_exact_match(generate_responses(model, samples, 16, cache), truth);
}

double text_perplexity(const MultimodalModel& model, const std::vector<std::string>& texts) {
  return std::exp(text_loss(model, texts));
}

ScoreResult probe_accuracy(const MultimodalModel& model, const std::vector<SyntheticSample>& samples,
                           VisualCache* cache) {
  std::vector<std::string> truth;
  for (const auto& s : samples) {
    if (s.annotation.question != VqaQuestion::marker_cell) throw std::invalid_argument("not a marker probe sample");
    truth.push_back(assistant_text(s));
  }
  const auto outputs = generate_responses(model, samples, 8, cache);
  double hits = 0;
  for (std::size_t i = 0; i < outputs.size(); ++i)
    if (outputs[i] == truth[i]) hits += 1;
  return finish(hits, 0, outputs.size());
}

void EvalReport::add(const std::string& name, double value, std::size_t n, const std::string& digest) {
  if (name.empty() || name.find_first_of(",\n") != std::string::npos)
    throw std::invalid_argument("metric name '" + name + "' is empty or contains a separator");
  metrics[name] = {value, n, digest};
}

void EvalReport::validate() const {
  for (const auto& [name, m] : metrics) {
    if (m.n < 1) throw std::invalid_argument("metric " + name + " has no samples");
    if (!std::isfinite(m.value)) throw std::invalid_argument("metric " + name + " is not finite");
    const bool is_rate = name.find("accuracy") != std::string::npos || name.find("match") != std::string::npos ||
                         name.find("rate") != std::string::npos;
    if (is_rate && (m.value < 0 || m.value > 1)) throw std::invalid_argument("metric " + name + " outside [0, 1]");
  }
}

std::string EvalReport::to_csv() const {
  validate();
  std::string out = "metric,value,n,config_digest\n";
  for (const auto& [name, m] : metrics)
    out += name + "," + fmt17(m.value) + "," + std::to_string(m.n) + "," + m.config_digest + "\n";
  return out;
}

EvalReport EvalReport::from_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != "metric,value,n,config_digest")
    throw std::invalid_argument("eval report header is missing");
  EvalReport r;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (line.back() == ',') f.emplace_back();
    if (f.size() != 4) throw std::invalid_argument("eval report row '" + line + "' needs 4 fields");
    r.metrics[f[0]] = {std::stod(f[1]), static_cast<std::size_t>(std::stoull(f[2])), f[3]};
  }
  r.validate();
  return r;
}

void EvalReport::write_csv(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << to_csv();
  if (!out) throw std::runtime_error("cannot write eval report " + path.string());
}

}  // namespace mixpipe
