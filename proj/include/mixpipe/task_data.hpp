// Copyright 2026 The mixpipe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Tuning data: instruction templates, coordinate text, conversation
// serialisation, the size-proportional dataset sampler, square padding and
// closed-world synthetic scenes whose answers are rendered from stored
// annotations.

#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mixpipe/image.hpp"
#include "mixpipe/random.hpp"

namespace mixpipe {

enum class TaskTag { caption, vqa, detection, rec, reg, pose, grounded_caption, classify, text_only };

std::string to_string(TaskTag tag);
TaskTag parse_task_tag(const std::string& text);
const std::vector<TaskTag>& all_task_tags();

// ---- instruction templates -------------------------------------------------

struct InstructionTemplate {
  std::string benchmarks;  // the table's benchmark column
  std::string text;        // with {placeholder} slots
};

// Every row of the instruction table in order. Rows whose cell holds two
// alternative instructions appear as two entries.
const std::vector<InstructionTemplate>& instruction_table();

// Placeholder values in order of appearance; a name may repeat.
using Slots = std::vector<std::pair<std::string, std::string>>;

// Replaces each {name} with the next unused value for that name. Throws if a
// slot is missing or a value is left over.
std::string fill_template(const std::string& text, const Slots& slots);

// The template used for a task, with slots substituted. Detection without a
// "category name" slot uses the generic form; pose with a "coordinate" slot
// asks for key points, otherwise for people.
std::string instruction_for(TaskTag tag, const Slots& slots = {});

inline constexpr const char* kClassifyResponse = "This is a [CLASS]";
inline constexpr const char* kRegionPrompt = "Please provide a short description for this region : {region}";
inline constexpr const char* kCaptionPrompt = "Provide a one-sentence caption for the provided image.";

// ---- geometry text ------------------------------------------------------------

struct BBox {
  double x1 = 0, y1 = 0, x2 = 1, y2 = 1;

  void validate() const;
  bool operator==(const BBox&) const = default;
};

struct Point {
  double x = 0, y = 0;
  bool operator==(const Point&) const = default;
};

inline constexpr const char* kKeypointNames[5] = {"head", "l_hand", "r_hand", "l_foot", "r_foot"};

struct Keypoints {
  Point points[5];  // kKeypointNames order

  void validate() const;
  bool operator==(const Keypoints&) const = default;
};

// "[0.100, 0.200, 0.500, 0.600]"
std::string serialize_bbox(const BBox& b);
BBox parse_bbox(const std::string& s);
// First "[a, b, c, d]" in `text` that parses as a box.
std::optional<BBox> find_first_bbox(const std::string& text);
std::string serialize_point(const Point& p);  // "[0.500, 0.250]"
std::string serialize_keypoints(const Keypoints& k);  // "head: [..]\n..." one line per point

// ---- conversations ------------------------------------------------------------

enum class Role { user, assistant };

struct Turn {
  Role role = Role::user;
  std::string text;
  bool operator==(const Turn&) const = default;
};

struct ConversationSample {
  std::vector<Turn> turns;
  std::shared_ptr<const ImageTensor> image;
  std::string image_file;
  TaskTag task = TaskTag::caption;

  void validate() const;
};

// Byte ids with a response mask. Layout: bos, then per exchange
// "User: <text>\n" "Assistant: " <response> eos, the mask covering each
// response and its eos.
struct TokenizedText {
  std::vector<std::int64_t> ids;
  std::vector<std::uint8_t> mask;
};

TokenizedText serialize_conversation(const ConversationSample& sample, int bos, int eos);
// The prompt for the last user turn, ready for generation.
std::vector<std::int64_t> serialize_prompt(const std::string& user_text, int bos);
// Plain text with every token after bos a target (captions and corpus text).
TokenizedText serialize_plain(const std::string& text, int bos, int eos, bool with_eos);

// ---- sampling -----------------------------------------------------------------

struct DatasetSpec {
  std::string name;
  std::uint64_t size = 1;
  std::uint64_t seed = 0;
  TaskTag task = TaskTag::caption;
};

struct SampleRef {
  std::size_t dataset = 0;
  std::uint64_t index = 0;
  bool operator==(const SampleRef&) const = default;
};

// Picks dataset i with probability size_i / sum(size), then a uniform item.
class NaturalFrequencySampler {
 public:
  NaturalFrequencySampler(std::vector<DatasetSpec> specs, std::uint64_t seed);
  SampleRef next();
  double probability(std::size_t dataset) const;

 private:
  std::vector<DatasetSpec> specs_;
  std::vector<std::uint64_t> cumulative_;
  Rng rng_;
};

// ---- images ---------------------------------------------------------------------

// Pads bottom/right with zeros to max(h, w).
ImageTensor pad_to_square(const ImageTensor& img);
// Box in normalised coordinates of the unpadded h x w image, re-expressed in
// the padded square.
BBox pad_bbox(const BBox& b, int height, int width);

// ---- synthetic scenes -------------------------------------------------------------

inline constexpr const char* kShapeKinds[3] = {"circle", "square", "triangle"};
inline constexpr const char* kColorNames[4] = {"red", "green", "blue", "yellow"};

struct ShapeRecord {
  int kind = 0;   // index into kShapeKinds
  int color = 0;  // index into kColorNames
  BBox box;
  bool operator==(const ShapeRecord&) const = default;
};

enum class VqaQuestion { count, color_of, shape_of, marker_cell };

struct Annotation {
  std::vector<ShapeRecord> shapes;
  int target = -1;  // shape referred to by rec / reg / vqa color_of/shape_of
  VqaQuestion question = VqaQuestion::count;
  std::optional<Keypoints> keypoints;
  std::optional<BBox> person;
  int marker_row = -1, marker_col = -1;
  int caption_style = 0;
};

struct SyntheticSample {
  ConversationSample sample;
  Annotation annotation;
};

struct GenOptions {
  int image_size = 32;
  int caption_style = 0;  // 0 and 1 are two disjoint caption domains
  int max_shapes = 3;
};

std::vector<SyntheticSample> gen_synthetic(TaskTag tag, std::uint64_t seed, std::size_t count,
                                           const GenOptions& opt = {});

// Fine-grained probe: mid-grey canvas split into grid x grid cells with a
// two-pixel marker (one white, one black pixel side by side at an even
// column) in one cell. Any 2x downsample averages the marker away.
std::vector<SyntheticSample> gen_marker_probe(std::uint64_t seed, std::size_t count, int image_size = 64,
                                              int grid = 8);
inline constexpr const char* kMarkerQuestion = "which cell?";

// Re-renders the prompt / answer from the annotation alone.
std::string render_prompt(TaskTag tag, const Annotation& a);
std::string render_answer(TaskTag tag, const Annotation& a);
std::string describe_shape(const ShapeRecord& s);  // "red circle"

// Sentences for the text-only stream; split 0 is training, 1 is held out.
std::vector<std::string> gen_text_corpus(std::uint64_t seed, std::size_t count, int split = 0);

// ---- manifests --------------------------------------------------------------------

// JSON lines; image files are written next to the manifest as P6 pixmaps.
void write_manifest(const std::vector<SyntheticSample>& samples, const std::filesystem::path& manifest);
std::vector<SyntheticSample> read_manifest(const std::filesystem::path& manifest);

}  // namespace mixpipe
