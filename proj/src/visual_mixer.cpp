// Copyright 2026 The mixpipe Authors
// SPDX-License-Identifier: Apache-2.0

#include "mixpipe/visual_mixer.hpp"

#include <sstream>
#include <stdexcept>

#include "mixpipe/ops.hpp"
#include "mixpipe/random.hpp"

namespace mixpipe {
namespace {

Tensor seeded_normal(Shape shape, std::uint64_t seed, const std::string& name) {
  Rng rng(mix_seed(seed, hash_string(name)));
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.normal(0.0, 0.02);
  return Tensor(std::move(shape), std::move(v));
}

}  // namespace

void MixLayout::validate() const {
  if (patch_sources.empty()) throw std::invalid_argument("mix layout needs at least one patch source");
  if (query_source.empty()) throw std::invalid_argument("mix layout needs a query source");
  if (lm_dim == 0) throw std::invalid_argument("mix layout lm_dim must be positive");
  if (patch_proj_weight.rank() != 2 || patch_proj_weight.dim(1) != lm_dim ||
      patch_proj_bias.shape() != Shape{lm_dim})
    throw ShapeError("patch projection must map to lm_dim " + std::to_string(lm_dim));
  if (query_proj_weight.rank() != 2 || query_proj_weight.dim(1) != lm_dim ||
      query_proj_bias.shape() != Shape{lm_dim})
    throw ShapeError("query projection must map to lm_dim " + std::to_string(lm_dim));
}

std::map<std::string, Tensor> MixLayout::params() const {
  const std::string p = kMixerPrefix;
  return {{p + "patch_proj.weight", patch_proj_weight},
          {p + "patch_proj.bias", patch_proj_bias},
          {p + "query_proj.weight", query_proj_weight},
          {p + "query_proj.bias", query_proj_bias}};
}

MixLayout make_layout(std::vector<std::string> patch_sources, std::span<const std::size_t> patch_dims,
                      std::string query_source, std::size_t query_dim, std::size_t lm_dim,
                      std::uint64_t seed) {
  if (patch_sources.size() != patch_dims.size())
    throw std::invalid_argument("make_layout: " + std::to_string(patch_sources.size()) + " sources but " +
                                std::to_string(patch_dims.size()) + " widths");
  std::size_t in = 0;
  for (auto d : patch_dims) in += d;
  if (in == 0 || query_dim == 0 || lm_dim == 0) throw std::invalid_argument("make_layout: widths must be positive");
  MixLayout layout;
  layout.patch_sources = std::move(patch_sources);
  layout.query_source = std::move(query_source);
  layout.lm_dim = lm_dim;
  layout.patch_proj_weight = seeded_normal({in, lm_dim}, seed, "patch_proj.weight");
  layout.patch_proj_bias = Tensor(Shape{lm_dim});
  layout.query_proj_weight = seeded_normal({query_dim, lm_dim}, seed, "query_proj.weight");
  layout.query_proj_bias = Tensor(Shape{lm_dim});
  layout.validate();
  return layout;
}

TokenGroup channel_concat(std::span<const TokenGroup> groups) {
  if (groups.empty()) throw std::invalid_argument("channel_concat needs at least one group");
  const TokenGroup& first = groups.front();
  std::vector<Tensor> parts;
  for (const auto& g : groups) {
    if (g.count() != first.count())
      throw ShapeError("channel_concat: token count " + std::to_string(g.count()) + " of '" +
                       g.provenance.encoder_id + "' does not match " + std::to_string(first.count()) + " of '" +
                       first.provenance.encoder_id + "'");
    if (g.provenance.scale_tag != first.provenance.scale_tag ||
        g.provenance.crop_index != first.provenance.crop_index)
      throw std::invalid_argument("channel_concat: groups come from different views");
    parts.push_back(g.tokens);
  }
  if (groups.size() == 1) return first;
  Provenance prov = first.provenance;
  for (std::size_t i = 1; i < groups.size(); ++i) prov.encoder_id += "+" + groups[i].provenance.encoder_id;
  return make_group(ops::concat_cols(parts), std::move(prov));
}

TokenGroup project(const TokenGroup& group, const Tensor& weight, const Tensor& bias) {
  TokenGroup out{ops::linear(group.tokens, weight, bias), group.provenance, group.segments};
  return out;
}

TokenGroup assemble_group(const TokenGroup& patch, const TokenGroup& query, const MixLayout& layout) {
  if (!query.tokens.defined() || query.count() == 0)
    throw std::invalid_argument("assemble_group: the query group must not be empty");
  if (patch.dim() != layout.lm_dim || query.dim() != layout.lm_dim)
    throw ShapeError("assemble_group: widths " + std::to_string(query.dim()) + " (query) and " +
                     std::to_string(patch.dim()) + " (patch) must both equal lm_dim " +
                     std::to_string(layout.lm_dim));
  const Tensor parts[] = {query.tokens, patch.tokens};
  TokenGroup out{ops::concat_rows(parts), patch.provenance, {}};
  out.provenance.encoder_id = query.provenance.encoder_id + "|" + patch.provenance.encoder_id;
  for (const auto& s : query.segments) out.segments.push_back(s);
  for (auto s : patch.segments) {
    s.begin += query.count();
    s.end += query.count();
    out.segments.push_back(std::move(s));
  }
  return out;
}

TokenGroup mix_group(std::span<const TokenGroup> patch_groups, const TokenGroup& query, const MixLayout& layout) {
  if (patch_groups.size() != layout.patch_sources.size())
    throw std::invalid_argument("mix_group: expected " + std::to_string(layout.patch_sources.size()) +
                                " patch groups, got " + std::to_string(patch_groups.size()));
  for (std::size_t i = 0; i < patch_groups.size(); ++i)
    if (patch_groups[i].provenance.encoder_id != layout.patch_sources[i])
      throw std::invalid_argument("mix_group: patch group " + std::to_string(i) + " is from '" +
                                  patch_groups[i].provenance.encoder_id + "', layout expects '" +
                                  layout.patch_sources[i] + "'");
  const TokenGroup joined = channel_concat(patch_groups);
  return assemble_group(project(joined, layout.patch_proj_weight, layout.patch_proj_bias),
                        project(query, layout.query_proj_weight, layout.query_proj_bias), layout);
}

TokenGroup concat_groups(std::span<const TokenGroup> groups) {
  if (groups.empty()) throw std::invalid_argument("concat_groups needs at least one group");
  if (groups.size() == 1) return groups.front();
  std::vector<Tensor> parts;
  TokenGroup out{Tensor(), groups.front().provenance, {}};
  std::size_t offset = 0;
  for (const auto& g : groups) {
    parts.push_back(g.tokens);
    for (auto s : g.segments) {
      s.begin += offset;
      s.end += offset;
      out.segments.push_back(std::move(s));
    }
    offset += g.count();
  }
  out.tokens = ops::concat_rows(parts);
  return out;
}

std::string describe_segments(const TokenGroup& group) {
  std::ostringstream os;
  for (const auto& s : group.segments)
    os << s.begin << ' ' << s.end << ' ' << s.provenance.encoder_id << ' ' << s.provenance.scale_tag << ' '
       << s.provenance.crop_index << '\n';
  return os.str();
}

}  // namespace mixpipe
