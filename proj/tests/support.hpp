// Copyright 2026 The mixpipe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Shared fixtures for the test binaries.

#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "mixpipe/model.hpp"

namespace mixpipe::testing {

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::filesystem::path source_dir() { return MIXPIPE_SOURCE_DIR; }

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("mixpipe_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

// Every toy component at minimal width so finite differences can visit each
// coordinate: 16 px views, 8 px patches, 2 queries, a one-block LM.
inline ModelConfig tiny_config() {
  ModelConfig cfg = toy_config();
  for (auto& e : cfg.patch_encoders) {
    e.input_size = 16;
    e.dim = 4;
    e.heads = 2;
  }
  cfg.query_encoder.input_size = 16;
  cfg.query_encoder.num_queries = 2;
  cfg.query_encoder.input_dim = 4;
  cfg.query_encoder.dim = 4;
  cfg.query_encoder.heads = 2;
  cfg.base_res = 16;
  cfg.input_res = 16;
  cfg.lm.dim = 8;
  cfg.lm.depth = 1;
  cfg.lm.heads = 2;
  cfg.lm.max_seq_len = 48;
  cfg.validate();
  return cfg;
}

}  // namespace mixpipe::testing
