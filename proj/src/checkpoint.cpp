// Copyright 2026 The mixpipe Authors
// SPDX-License-Identifier: Apache-2.0

#include "mixpipe/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include "mixpipe/encoders.hpp"

namespace mixpipe {
namespace {

constexpr char kMagic[4] = {'M', 'X', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kPreamble = 4 + 4 + 8;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T get(const std::string& in, std::size_t offset) {
  T v;
  std::memcpy(&v, in.data() + offset, sizeof(T));
  return v;
}

bool valid_key(const std::string& k) {
  if (k.empty()) return false;
  for (char c : k)
    if (c <= ' ' || c == 0x7f) return false;
  return true;
}

Shape parse_shape(const std::string& s) {
  Shape shape;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    const auto x = s.find('x', pos);
    const std::string part = s.substr(pos, x == std::string::npos ? std::string::npos : x - pos);
    if (part.empty() || part.find_first_not_of("0123456789") != std::string::npos)
      throw std::invalid_argument("bad shape '" + s + "'");
    shape.push_back(std::stoull(part));
    if (shape.back() == 0) throw std::invalid_argument("zero dimension in shape '" + s + "'");
    if (x == std::string::npos) break;
    pos = x + 1;
  }
  return shape;
}

std::string shape_token(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out;
}

}  // namespace

std::string to_string(StageTag tag) {
  switch (tag) {
    case StageTag::init:
      return "init";
    case StageTag::pretrain_real:
      return "pretrain_real";
    case StageTag::pretrain_syn:
      return "pretrain_syn";
    case StageTag::mixed:
      return "mixed";
    case StageTag::finetuned:
      return "finetuned";
  }
  return "?";
}

StageTag parse_stage_tag(const std::string& text) {
  for (auto t : {StageTag::init, StageTag::pretrain_real, StageTag::pretrain_syn, StageTag::mixed,
                 StageTag::finetuned})
    if (to_string(t) == text) return t;
  throw std::invalid_argument("unknown stage tag '" + text + "'");
}

CheckpointError::CheckpointError(const std::string& what, std::uint64_t offset)
    : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

void Checkpoint::validate() const {
  for (const auto& [k, t] : entries) {
    if (!valid_key(k)) throw std::invalid_argument("checkpoint key '" + k + "' is empty or contains whitespace");
    if (!t.defined()) throw std::invalid_argument("checkpoint entry '" + k + "' is undefined");
    for (double v : t.data())
      if (!std::isfinite(v)) throw NumericError("checkpoint entry '" + k + "' holds a non-finite value");
  }
  for (const auto& [k, v] : meta.config)
    if (!valid_key(k) || v.find('\n') != std::string::npos)
      throw std::invalid_argument("checkpoint config entry '" + k + "' cannot be serialised");
  if (!meta.config_digest.empty() && !valid_key(meta.config_digest))
    throw std::invalid_argument("config digest must not contain whitespace");
}

bool bit_equal(const Checkpoint& a, const Checkpoint& b) {
  if (!(a.meta == b.meta) || a.entries.size() != b.entries.size()) return false;
  for (auto ia = a.entries.begin(), ib = b.entries.begin(); ia != a.entries.end(); ++ia, ++ib) {
    if (ia->first != ib->first || ia->second.shape() != ib->second.shape()) return false;
    const auto da = ia->second.data(), db = ib->second.data();
    if (std::memcmp(da.data(), db.data(), da.size_bytes()) != 0) return false;
  }
  return true;
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  ckpt.validate();
  std::uint64_t payload = 0;
  for (const auto& [_, t] : ckpt.entries) payload += t.numel() * sizeof(double);
  std::ostringstream h;
  h << "stage_tag " << to_string(ckpt.meta.stage_tag) << '\n';
  h << "config_digest " << (ckpt.meta.config_digest.empty() ? "-" : ckpt.meta.config_digest) << '\n';
  h << "step " << ckpt.meta.step << '\n';
  for (const auto& [k, v] : ckpt.meta.config) h << "config " << k << '=' << v << '\n';
  h << "payload_bytes " << payload << '\n';
  for (const auto& [k, t] : ckpt.entries) h << "tensor " << k << " f64 " << shape_token(t.shape()) << '\n';
  const std::string header = h.str();

  std::string out;
  out.reserve(kPreamble + header.size() + payload);
  out.append(kMagic, 4);
  put<std::uint32_t>(out, kVersion);
  put<std::uint64_t>(out, header.size());
  out += header;
  for (const auto& [_, t] : ckpt.entries) {
    const auto d = t.data();
    out.append(reinterpret_cast<const char*>(d.data()), d.size_bytes());
  }
  return out;
}

Checkpoint parse_checkpoint(const std::string& bytes) {
  if (bytes.size() < kPreamble) throw CheckpointError("file too short for the checkpoint preamble", bytes.size());
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw CheckpointError("bad magic, expected MXCK", 0);
  if (const auto v = get<std::uint32_t>(bytes, 4); v != kVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(v), 4);
  const auto header_len = get<std::uint64_t>(bytes, 8);
  if (header_len > bytes.size() - kPreamble)
    throw CheckpointError("header length " + std::to_string(header_len) + " runs past end of file", 8);

  Checkpoint ckpt;
  std::vector<std::pair<std::string, Shape>> layout;
  std::uint64_t declared = 0;
  bool have_payload = false, have_tag = false, have_step = false, have_digest = false;
  std::size_t pos = kPreamble;
  const std::size_t header_end = kPreamble + header_len;
  while (pos < header_end) {
    const auto nl = bytes.find('\n', pos);
    if (nl == std::string::npos || nl >= header_end) throw CheckpointError("unterminated header line", pos);
    const std::string line = bytes.substr(pos, nl - pos);
    std::istringstream ls(line);
    std::string field;
    ls >> field;
    try {
      if (field == "stage_tag") {
        std::string v;
        ls >> v;
        ckpt.meta.stage_tag = parse_stage_tag(v);
        have_tag = true;
      } else if (field == "config_digest") {
        ls >> ckpt.meta.config_digest;
        if (ckpt.meta.config_digest == "-") ckpt.meta.config_digest.clear();
        have_digest = true;
      } else if (field == "step") {
        if (!(ls >> ckpt.meta.step)) throw std::invalid_argument("bad step");
        have_step = true;
      } else if (field == "config") {
        const auto rest = line.substr(7);
        const auto eq = rest.find('=');
        if (eq == std::string::npos) throw std::invalid_argument("config line without '='");
        ckpt.meta.config[rest.substr(0, eq)] = rest.substr(eq + 1);
      } else if (field == "payload_bytes") {
        if (!(ls >> declared)) throw std::invalid_argument("bad payload_bytes");
        have_payload = true;
      } else if (field == "tensor") {
        std::string key, dtype, shape;
        if (!(ls >> key >> dtype >> shape)) throw std::invalid_argument("tensor line needs key, dtype, shape");
        if (dtype != "f64") throw std::invalid_argument("unsupported dtype " + dtype);
        if (!layout.empty() && !(layout.back().first < key))
          throw std::invalid_argument("tensor keys are not strictly sorted at '" + key + "'");
        layout.emplace_back(key, parse_shape(shape));
      } else {
        throw std::invalid_argument("unknown header field '" + field + "'");
      }
    } catch (const std::invalid_argument& e) {
      throw CheckpointError(std::string("corrupted header: ") + e.what(), pos);
    }
    pos = nl + 1;
  }
  if (!have_tag || !have_step || !have_digest || !have_payload)
    throw CheckpointError("header is missing a required field", kPreamble);

  std::uint64_t expected = 0;
  for (const auto& [_, s] : layout) expected += shape_numel(s) * sizeof(double);
  if (expected != declared)
    throw CheckpointError("declared payload_bytes " + std::to_string(declared) + " but tensors need " +
                              std::to_string(expected),
                          header_end);
  const std::uint64_t actual = bytes.size() - header_end;
  if (actual != declared)
    throw CheckpointError("payload is " + std::to_string(actual) + " bytes, header declares " +
                              std::to_string(declared),
                          actual < declared ? bytes.size() : header_end + declared);

  std::size_t off = header_end;
  for (auto& [key, shape] : layout) {
    const std::size_t n = shape_numel(shape);
    std::vector<double> values(n);
    std::memcpy(values.data(), bytes.data() + off, n * sizeof(double));
    for (double v : values)
      if (!std::isfinite(v)) throw CheckpointError("non-finite value in tensor '" + key + "'", off);
    ckpt.entries.emplace(key, Tensor(shape, std::move(values)));
    off += n * sizeof(double);
  }
  return ckpt;
}

void save(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(ckpt);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
}

Checkpoint load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_checkpoint(bytes);
}

double mix_value(double a, double b, double beta) {
  if (beta == 1.0) return a;
  if (beta == 0.0) return b;
  if (std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b)) return a;
  // Both orientations reduce to the same pair of weights: the larger weight
  // is the stored coefficient and the smaller one is 1 - larger, which is
  // exact for values in [0.5, 1].
  if (beta >= 0.5) return beta * a + (1.0 - beta) * b;
  const double gamma = 1.0 - beta;
  return (1.0 - gamma) * a + gamma * b;
}

namespace {

Checkpoint copy_of(const Checkpoint& c) {
  Checkpoint out;
  out.meta = c.meta;
  for (const auto& [k, t] : c.entries) out.entries.emplace(k, t.detach());
  return out;
}

}  // namespace

Checkpoint mix_weights(const Checkpoint& a, const Checkpoint& b, double beta) {
  if (!(beta >= 0.0 && beta <= 1.0)) throw std::invalid_argument("beta must lie in [0, 1], got " + std::to_string(beta));
  std::vector<std::string> only_a, only_b;
  for (const auto& [k, _] : a.entries)
    if (!b.entries.count(k)) only_a.push_back(k);
  for (const auto& [k, _] : b.entries)
    if (!a.entries.count(k)) only_b.push_back(k);
  if (!only_a.empty() || !only_b.empty()) {
    std::string msg = "checkpoint key sets differ;";
    for (const auto& k : only_a) msg += " only in a: " + k + ";";
    for (const auto& k : only_b) msg += " only in b: " + k + ";";
    throw std::invalid_argument(msg);
  }
  if (a.meta.config_digest != b.meta.config_digest)
    throw std::invalid_argument("checkpoints come from different model configs (" + a.meta.config_digest + " vs " +
                                b.meta.config_digest + ")");
  Checkpoint out;
  out.meta = a.meta;
  out.meta.stage_tag = StageTag::mixed;
  out.meta.step = std::max(a.meta.step, b.meta.step);
  for (const auto& [k, ta] : a.entries) {
    const Tensor& tb = b.entries.at(k);
    if (ta.shape() != tb.shape())
      throw ShapeError("shape mismatch for '" + k + "': " + shape_str(ta.shape()) + " vs " + shape_str(tb.shape()));
    const auto da = ta.data(), db = tb.data();
    if (k.rfind(kEncoderPrefix, 0) == 0) {
      if (std::memcmp(da.data(), db.data(), da.size_bytes()) != 0)
        throw std::invalid_argument("frozen key '" + k + "' differs between the checkpoints");
      out.entries.emplace(k, ta.detach());
      continue;
    }
    std::vector<double> v(da.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = mix_value(da[i], db[i], beta);
    out.entries.emplace(k, Tensor(ta.shape(), std::move(v)));
  }
  // The endpoints hand back the selected input unchanged, metadata included.
  if (beta == 1.0) return copy_of(a);
  if (beta == 0.0) return copy_of(b);
  return out;
}

}  // namespace mixpipe
