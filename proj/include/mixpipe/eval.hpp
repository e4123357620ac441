// Copyright 2026 The mixpipe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Metrics over generated answers. The string forms are pure functions of
// (outputs, ground truth); the model forms generate first, then score.

#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mixpipe/model.hpp"
#include "mixpipe/task_data.hpp"

namespace mixpipe {

double iou(const BBox& a, const BBox& b);

struct ScoreResult {
  double accuracy = 0;
  double parse_failure_rate = 0;  // rec only
  std::size_t n = 0;
};

// 1 per output whose first bbox has IoU >= 0.5 with the truth. Outputs
// without a parseable box score 0 and count as parse failures.
ScoreResult rec_accuracy(const std::vector<std::string>& outputs, const std::vector<BBox>& truth);
// Case-folded, whitespace-trimmed exact match; a trailing '.' is ignored.
ScoreResult vqa_exact_match(const std::vector<std::string>& outputs, const std::vector<std::string>& truth);
std::string normalize_answer(const std::string& s);

// Greedy response to a single user turn, using every view of the plan.
std::string generate_response(const MultimodalModel& model, const ImageTensor* image, const std::string& user_text,
                              int max_new, VisualCache* cache);
std::vector<std::string> generate_responses(const MultimodalModel& model, const std::vector<SyntheticSample>& samples,
                                            int max_new, VisualCache* cache);

// Ground truth box of a rec sample.
BBox rec_truth(const SyntheticSample& s);

ScoreResult rec_accuracy(const MultimodalModel& model, const std::vector<SyntheticSample>& samples,
                         VisualCache* cache);
ScoreResult vqa_exact_match(const MultimodalModel& model, const std::vector<SyntheticSample>& samples,
                            VisualCache* cache);

// exp(mean next-token CE) over bos + text + eos sequences.
double text_perplexity(const MultimodalModel& model, const std::vector<std::string>& texts);

// Cell-identification accuracy on the marker probe: greedy answer compared
// exactly with "r<row>c<col>".
ScoreResult probe_accuracy(const MultimodalModel& model, const std::vector<SyntheticSample>& samples,
                           VisualCache* cache);

struct MetricValue {
  double value = 0;
  std::size_t n = 0;
  std::string config_digest;
  bool operator==(const MetricValue&) const = default;
};

struct EvalReport {
  std::map<std::string, MetricValue> metrics;

  void add(const std::string& name, double value, std::size_t n, const std::string& digest);
  void validate() const;
  // "metric,value,n,config_digest" then one row per metric in name order.
  std::string to_csv() const;
  static EvalReport from_csv(const std::string& text);
  void write_csv(const std::filesystem::path& path) const;
};

}  // namespace mixpipe
