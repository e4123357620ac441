// Copyright 2026 The mixpipe Authors
// SPDX-License-Identifier: Apache-2.0

#include "mixpipe/task_data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <regex>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "mixpipe/language_core.hpp"

namespace mixpipe {
namespace {

using json = nlohmann::json;

constexpr const char* kTaskNames[] = {"caption", "vqa",  "detection", "rec",      "reg",
                                      "pose",    "grounded_caption", "classify", "text_only"};

constexpr double kPalette[4][3] = {{0.9, 0.1, 0.1}, {0.1, 0.8, 0.2}, {0.15, 0.3, 0.95}, {0.95, 0.9, 0.1}};

std::string fmt3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

const char* number_word(std::size_t n) {
  static const char* words[] = {"zero", "one", "two", "three", "four", "five", "six"};
  return n < 7 ? words[n] : "many";
}

std::string join_list(const std::vector<std::string>& items) {
  if (items.size() == 1) return items[0];
  std::string s;
  for (std::size_t i = 0; i + 1 < items.size(); ++i) s += (i ? ", " : "") + items[i];
  return s + " and " + items.back();
}

void fill_rect(ImageTensor& img, int x0, int y0, int x1, int y1, const double* rgb) {
  for (int y = std::max(0, y0); y < std::min(img.height, y1); ++y)
    for (int x = std::max(0, x0); x < std::min(img.width, x1); ++x)
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = rgb[c];
}

void draw_shape(ImageTensor& img, int kind, const double* rgb, int px, int py, int size) {
  const double cx = px + size / 2.0, cy = py + size / 2.0, r = size / 2.0;
  for (int y = py; y < py + size; ++y)
    for (int x = px; x < px + size; ++x) {
      const double fx = x + 0.5, fy = y + 0.5;
      bool inside = true;
      if (kind == 0) {
        inside = (fx - cx) * (fx - cx) + (fy - cy) * (fy - cy) <= r * r;
      } else if (kind == 2) {
        // Apex at the top centre, base along the bottom edge.
        const double t = (fy - py) / size;
        inside = std::abs(fx - cx) <= t * r;
      }
      if (inside)
        for (int c = 0; c < 3; ++c) img.at(y, x, c) = rgb[c];
    }
}

void draw_line(ImageTensor& img, double x0, double y0, double x1, double y1) {
  const int steps = std::max(2, static_cast<int>(std::ceil(std::max(std::abs(x1 - x0), std::abs(y1 - y0)) * 2)));
  for (int i = 0; i <= steps; ++i) {
    const double t = static_cast<double>(i) / steps;
    const int x = static_cast<int>(x0 + (x1 - x0) * t), y = static_cast<int>(y0 + (y1 - y0) * t);
    if (x >= 0 && y >= 0 && x < img.width && y < img.height)
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = 1.0;
  }
}

// Places up to `count` shapes with distinct (kind, colour) in distinct
// quadrants of an n x n canvas.
std::vector<ShapeRecord> place_shapes(Rng& rng, int n, std::size_t count, std::vector<std::array<int, 3>>& pixels) {
  std::vector<int> quadrants = {0, 1, 2, 3};
  for (int i = 3; i > 0; --i) std::swap(quadrants[i], quadrants[rng.below(i + 1)]);
  std::vector<ShapeRecord> shapes;
  const int half = n / 2;
  while (shapes.size() < count) {
    ShapeRecord s;
    s.kind = static_cast<int>(rng.below(3));
    s.color = static_cast<int>(rng.below(4));
    bool dup = false;
    for (const auto& o : shapes) dup = dup || (o.kind == s.kind && o.color == s.color);
    if (dup) continue;
    const int q = quadrants[shapes.size()];
    const int size = n / 4 + static_cast<int>(rng.below(static_cast<std::uint64_t>(half - 2 - n / 4 + 1)));
    const int px = (q % 2) * half + static_cast<int>(rng.below(static_cast<std::uint64_t>(half - size + 1)));
    const int py = (q / 2) * half + static_cast<int>(rng.below(static_cast<std::uint64_t>(half - size + 1)));
    s.box = {static_cast<double>(px) / n, static_cast<double>(py) / n, static_cast<double>(px + size) / n,
             static_cast<double>(py + size) / n};
    shapes.push_back(s);
    pixels.push_back({px, py, size});
  }
  return shapes;
}

std::shared_ptr<ImageTensor> render_scene(int n, const std::vector<ShapeRecord>& shapes,
                                          const std::vector<std::array<int, 3>>& pixels) {
  auto img = std::make_shared<ImageTensor>(n, n, 0.0);
  for (std::size_t i = 0; i < shapes.size(); ++i)
    draw_shape(*img, shapes[i].kind, kPalette[shapes[i].color], pixels[i][0], pixels[i][1], pixels[i][2]);
  return img;
}

int unique_target(Rng& rng, const std::vector<ShapeRecord>& shapes, bool by_kind) {
  std::vector<int> ok;
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    int same = 0;
    for (const auto& o : shapes) same += by_kind ? o.kind == shapes[i].kind : o.color == shapes[i].color;
    if (same == 1) ok.push_back(static_cast<int>(i));
  }
  if (ok.empty()) return -1;
  return ok[rng.below(ok.size())];
}

json box_json(const BBox& b) { return json::array({b.x1, b.y1, b.x2, b.y2}); }
BBox box_from_json(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>(), j.at(3).get<double>()}; }

const char* question_name(VqaQuestion q) {
  switch (q) {
    case VqaQuestion::count:
      return "count";
    case VqaQuestion::color_of:
      return "color_of";
    case VqaQuestion::shape_of:
      return "shape_of";
    case VqaQuestion::marker_cell:
      return "marker_cell";
  }
  return "?";
}

VqaQuestion parse_question(const std::string& s) {
  for (auto q : {VqaQuestion::count, VqaQuestion::color_of, VqaQuestion::shape_of, VqaQuestion::marker_cell})
    if (s == question_name(q)) return q;
  throw std::invalid_argument("unknown question kind '" + s + "'");
}

}  // namespace

std::string to_string(TaskTag tag) { return kTaskNames[static_cast<int>(tag)]; }

TaskTag parse_task_tag(const std::string& text) {
  for (auto t : all_task_tags())
    if (to_string(t) == text) return t;
  throw std::invalid_argument("unknown task tag '" + text + "'");
}

const std::vector<TaskTag>& all_task_tags() {
  static const std::vector<TaskTag> tags = {TaskTag::caption,          TaskTag::vqa,      TaskTag::detection,
                                            TaskTag::rec,              TaskTag::reg,      TaskTag::pose,
                                            TaskTag::grounded_caption, TaskTag::classify, TaskTag::text_only};
  return tags;
}

const std::vector<InstructionTemplate>& instruction_table() {
  // Cells that wrap over several lines are joined with one space.
  static const std::vector<InstructionTemplate> table = {
      {"LLaVA-Bench, MM-Vet,MathVista", ""},
      {"VQAV2,GQA,OKVQA,VSR,MME,OCR-VQA", "Answer the question using a single word or phrase."},
      {"SeedBench,ScienceQA,IconVQA", "Answer with the option's letter from the given choices directly."},
      {"RefCOCO,RefCOCO+,RefCOCOg",
       "Please provide the bounding box coordinate of the region this sentence describes: {description}."},
      {"TextVQA", "Reference OCR token: {OCR} Answer the question using a single word or phrase."},
      {"VizWiz",
       "When the provided information is insufficient, respond with 'Unanswerable'. Answer the question using a "
       "single word or phrase."},
      {"CCBench,MMBench", "There are several options: {options}"},
      {"Object Detection", "Detect all objects shown in the image."},
      {"Object Detection", "detect all {category name} shown in the image."},
      {"Human Pose Detection", "Detect all people shown in the image."},
      {"Human Pose Detection", "Detect the key points of the person in the region {coordinate}."},
      {"Document Layout", "Detect all texts and provide their bounding box coordinated."},
      {"Grounded Caption", "Describe the image concisely. Include the bounding box for each mentioned object."},
      {"Relation Detection", "What is the relationship between the object in {coordinate} and the object in {coordinate}?"},
      {"Referring Relationship",
       "Please provide the bounding box coordinate of the region this sentence describes: {description}"},
  };
  return table;
}

std::string fill_template(const std::string& text, const Slots& slots) {
  std::vector<bool> used(slots.size(), false);
  std::string out;
  std::size_t pos = 0;
  while (true) {
    const auto open = text.find('{', pos);
    if (open == std::string::npos) break;
    const auto close = text.find('}', open);
    if (close == std::string::npos) throw std::invalid_argument("unterminated placeholder in template");
    const std::string name = text.substr(open + 1, close - open - 1);
    std::size_t i = 0;
    while (i < slots.size() && (used[i] || slots[i].first != name)) ++i;
    if (i == slots.size()) throw std::invalid_argument("template needs a value for {" + name + "}");
    used[i] = true;
    out += text.substr(pos, open - pos) + slots[i].second;
    pos = close + 1;
  }
  out += text.substr(pos);
  for (std::size_t i = 0; i < slots.size(); ++i)
    if (!used[i]) throw std::invalid_argument("template has no placeholder {" + slots[i].first + "}");
  return out;
}

std::string instruction_for(TaskTag tag, const Slots& slots) {
  const auto& t = instruction_table();
  auto has = [&](const char* name) {
    return std::any_of(slots.begin(), slots.end(), [&](const auto& s) { return s.first == name; });
  };
  switch (tag) {
    case TaskTag::caption:
      return fill_template(kCaptionPrompt, slots);
    case TaskTag::vqa:
      return fill_template(t[1].text, slots);
    case TaskTag::detection:
      return fill_template(has("category name") ? t[8].text : t[7].text, slots);
    case TaskTag::rec:
      return fill_template(t[3].text, slots);
    case TaskTag::reg:
      return fill_template(kRegionPrompt, slots);
    case TaskTag::pose:
      return fill_template(has("coordinate") ? t[10].text : t[9].text, slots);
    case TaskTag::grounded_caption:
      return fill_template(t[12].text, slots);
    case TaskTag::classify:
      return fill_template("Classify the image.", slots);
    case TaskTag::text_only:
      break;
  }
  throw std::invalid_argument("text_only samples carry no instruction");
}

void BBox::validate() const {
  for (double v : {x1, y1, x2, y2})
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("bbox coordinate outside [0, 1]");
  if (!(x1 < x2 && y1 < y2)) throw std::invalid_argument("bbox needs x1 < x2 and y1 < y2");
}

void Keypoints::validate() const {
  for (const auto& p : points)
    if (!(p.x >= 0.0 && p.x <= 1.0 && p.y >= 0.0 && p.y <= 1.0))
      throw std::invalid_argument("keypoint outside [0, 1]");
}

std::string serialize_bbox(const BBox& b) {
  b.validate();
  return "[" + fmt3(b.x1) + ", " + fmt3(b.y1) + ", " + fmt3(b.x2) + ", " + fmt3(b.y2) + "]";
}

BBox parse_bbox(const std::string& s) {
  static const std::regex re(R"(\[\s*([0-9]*\.?[0-9]+)\s*,\s*([0-9]*\.?[0-9]+)\s*,\s*([0-9]*\.?[0-9]+)\s*,\s*([0-9]*\.?[0-9]+)\s*\])");
  std::smatch m;
  if (!std::regex_match(s, m, re)) throw std::invalid_argument("malformed bbox '" + s + "'");
  BBox b{std::stod(m[1]), std::stod(m[2]), std::stod(m[3]), std::stod(m[4])};
  b.validate();
  return b;
}

std::optional<BBox> find_first_bbox(const std::string& text) {
  std::size_t pos = 0;
  while ((pos = text.find('[', pos)) != std::string::npos) {
    const auto close = text.find(']', pos);
    if (close == std::string::npos) break;
    try {
      return parse_bbox(text.substr(pos, close - pos + 1));
    } catch (const std::invalid_argument&) {
    }
    ++pos;
  }
  return std::nullopt;
}

std::string serialize_point(const Point& p) { return "[" + fmt3(p.x) + ", " + fmt3(p.y) + "]"; }

std::string serialize_keypoints(const Keypoints& k) {
  k.validate();
  std::string s;
  for (int i = 0; i < 5; ++i) s += (i ? "\n" : "") + std::string(kKeypointNames[i]) + ": " + serialize_point(k.points[i]);
  return s;
}

void ConversationSample::validate() const {
  if (turns.empty()) throw std::invalid_argument("conversation has no turns");
  for (std::size_t i = 0; i < turns.size(); ++i) {
    const Role expected = i % 2 == 0 ? Role::user : Role::assistant;
    if (turns[i].role != expected) throw std::invalid_argument("conversation roles must alternate starting with user");
    if (turns[i].role == Role::assistant && turns[i].text.empty())
      throw std::invalid_argument("assistant turn " + std::to_string(i) + " is empty");
  }
}

TokenizedText serialize_conversation(const ConversationSample& sample, int bos, int eos) {
  sample.validate();
  TokenizedText out{{bos}, {0}};
  auto append = [&](const std::string& text, bool target) {
    for (auto id : encode_text(text)) {
      out.ids.push_back(id);
      out.mask.push_back(target);
    }
  };
  for (const auto& turn : sample.turns) {
    if (turn.role == Role::user) {
      append("User: " + turn.text + "\n", false);
      append("Assistant: ", false);
    } else {
      append(turn.text, true);
      out.ids.push_back(eos);
      out.mask.push_back(1);
    }
  }
  return out;
}

std::vector<std::int64_t> serialize_prompt(const std::string& user_text, int bos) {
  std::vector<std::int64_t> ids{bos};
  for (auto id : encode_text("User: " + user_text + "\nAssistant: ")) ids.push_back(id);
  return ids;
}

TokenizedText serialize_plain(const std::string& text, int bos, int eos, bool with_eos) {
  TokenizedText out{{bos}, {0}};
  for (auto id : encode_text(text)) {
    out.ids.push_back(id);
    out.mask.push_back(1);
  }
  if (with_eos) {
    out.ids.push_back(eos);
    out.mask.push_back(1);
  }
  return out;
}

NaturalFrequencySampler::NaturalFrequencySampler(std::vector<DatasetSpec> specs, std::uint64_t seed)
    : specs_(std::move(specs)), rng_(seed) {
  if (specs_.empty()) throw std::invalid_argument("sampler needs at least one dataset");
  std::uint64_t total = 0;
  for (const auto& s : specs_) {
    if (s.size < 1) throw std::invalid_argument("dataset '" + s.name + "' has size 0");
    total += s.size;
    cumulative_.push_back(total);
  }
}

SampleRef NaturalFrequencySampler::next() {
  const std::uint64_t u = rng_.below(cumulative_.back());
  const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
  const auto d = static_cast<std::size_t>(it - cumulative_.begin());
  return {d, u - (d ? cumulative_[d - 1] : 0)};
}

double NaturalFrequencySampler::probability(std::size_t dataset) const {
  return static_cast<double>(specs_.at(dataset).size) / static_cast<double>(cumulative_.back());
}

ImageTensor pad_to_square(const ImageTensor& img) {
  img.validate();
  if (img.square()) return img;
  const int side = std::max(img.height, img.width);
  ImageTensor out(side, side, 0.0);
  for (int y = 0; y < img.height; ++y)
    std::copy_n(&img.data[static_cast<std::size_t>(y) * img.width * 3], static_cast<std::size_t>(img.width) * 3,
                &out.data[static_cast<std::size_t>(y) * side * 3]);
  return out;
}

BBox pad_bbox(const BBox& b, int height, int width) {
  if (height < 1 || width < 1) throw std::invalid_argument("pad_bbox needs a positive image size");
  const double side = std::max(height, width);
  const double sx = width / side, sy = height / side;
  return {b.x1 * sx, b.y1 * sy, b.x2 * sx, b.y2 * sy};
}

std::string describe_shape(const ShapeRecord& s) {
  return std::string(kColorNames[s.color]) + " " + kShapeKinds[s.kind];
}

std::string render_prompt(TaskTag tag, const Annotation& a) {
  switch (tag) {
    case TaskTag::vqa:
      switch (a.question) {
        case VqaQuestion::marker_cell:
          return kMarkerQuestion;
        case VqaQuestion::count:
          return "How many shapes are there? " + instruction_for(tag);
        case VqaQuestion::color_of:
          return std::string("What color is the ") + kShapeKinds[a.shapes.at(a.target).kind] + "? " +
                 instruction_for(tag);
        case VqaQuestion::shape_of:
          return std::string("What shape is the ") + kColorNames[a.shapes.at(a.target).color] + " object? " +
                 instruction_for(tag);
      }
      break;
    case TaskTag::rec:
      return instruction_for(tag, {{"description", "the " + describe_shape(a.shapes.at(a.target))}});
    case TaskTag::reg:
      return instruction_for(tag, {{"region", serialize_bbox(a.shapes.at(a.target).box)}});
    case TaskTag::pose:
      return instruction_for(tag, {{"coordinate", serialize_bbox(a.person.value())}});
    case TaskTag::text_only:
      throw std::invalid_argument("text_only samples have no prompt");
    default:
      return instruction_for(tag);
  }
  throw std::logic_error("unhandled question kind");
}

std::string render_answer(TaskTag tag, const Annotation& a) {
  std::vector<std::string> items;
  switch (tag) {
    case TaskTag::caption:
      for (const auto& s : a.shapes) items.push_back((a.caption_style == 0 ? "a " : "") + describe_shape(s));
      return a.caption_style == 0 ? join_list(items) + "." : "image with " + join_list(items) + ".";
    case TaskTag::vqa:
      switch (a.question) {
        case VqaQuestion::count:
          return number_word(a.shapes.size());
        case VqaQuestion::color_of:
          return kColorNames[a.shapes.at(a.target).color];
        case VqaQuestion::shape_of:
          return kShapeKinds[a.shapes.at(a.target).kind];
        case VqaQuestion::marker_cell:
          return "r" + std::to_string(a.marker_row) + "c" + std::to_string(a.marker_col);
      }
      break;
    case TaskTag::detection: {
      std::string s;
      for (std::size_t i = 0; i < a.shapes.size(); ++i)
        s += (i ? "\n" : "") + describe_shape(a.shapes[i]) + ": " + serialize_bbox(a.shapes[i].box);
      return s;
    }
    case TaskTag::rec:
      return serialize_bbox(a.shapes.at(a.target).box);
    case TaskTag::reg:
      return describe_shape(a.shapes.at(a.target));
    case TaskTag::pose:
      return serialize_keypoints(a.keypoints.value());
    case TaskTag::grounded_caption:
      for (const auto& s : a.shapes) items.push_back("a " + describe_shape(s) + " " + serialize_bbox(s.box));
      return join_list(items) + ".";
    case TaskTag::classify: {
      std::string r = kClassifyResponse;
      r.replace(r.find("[CLASS]"), 7, kShapeKinds[a.shapes.at(0).kind]);
      return r;
    }
    case TaskTag::text_only:
      break;
  }
  throw std::invalid_argument("no answer rendering for task " + to_string(tag));
}

std::vector<SyntheticSample> gen_synthetic(TaskTag tag, std::uint64_t seed, std::size_t count, const GenOptions& opt) {
  if (opt.image_size < 16 || opt.image_size % 4 != 0)
    throw std::invalid_argument("synthetic image size must be a multiple of 4 and at least 16");
  if (opt.max_shapes < 1 || opt.max_shapes > 4) throw std::invalid_argument("max_shapes must lie in [1, 4]");
  std::vector<SyntheticSample> out;
  out.reserve(count);
  if (tag == TaskTag::text_only) {
    for (auto& line : gen_text_corpus(seed, count)) {
      SyntheticSample s;
      s.sample.task = tag;
      s.sample.turns = {{Role::user, std::move(line)}};
      out.push_back(std::move(s));
    }
    return out;
  }
  const int n = opt.image_size;
  for (std::size_t i = 0; i < count; ++i) {
    // By-index streams: sample i does not depend on how many came before.
    Rng rng(mix_seed(mix_seed(seed, static_cast<std::uint64_t>(tag)), i));
    SyntheticSample s;
    Annotation& a = s.annotation;
    a.caption_style = opt.caption_style;
    std::vector<std::array<int, 3>> pixels;
    if (tag == TaskTag::pose) {
      const double w = rng.uniform(0.35, 0.55), h = rng.uniform(0.6, 0.85);
      const double x0 = rng.uniform(0.05, 0.95 - w), y0 = rng.uniform(0.05, 0.95 - h);
      Keypoints k;
      k.points[0] = {x0 + w * rng.uniform(0.4, 0.6), y0 + h * 0.08};
      k.points[1] = {x0 + w * rng.uniform(0.0, 0.15), y0 + h * rng.uniform(0.3, 0.55)};
      k.points[2] = {x0 + w * rng.uniform(0.85, 1.0), y0 + h * rng.uniform(0.3, 0.55)};
      k.points[3] = {x0 + w * rng.uniform(0.1, 0.35), y0 + h};
      k.points[4] = {x0 + w * rng.uniform(0.65, 0.9), y0 + h};
      for (auto& p : k.points) p = {std::round(p.x * 1000) / 1000, std::round(p.y * 1000) / 1000};
      a.keypoints = k;
      a.person = BBox{std::round(x0 * 1000) / 1000, std::round(y0 * 1000) / 1000,
                      std::round((x0 + w) * 1000) / 1000, std::round((y0 + h) * 1000) / 1000};
      auto img = std::make_shared<ImageTensor>(n, n, 0.0);
      const double neck_x = k.points[0].x * n, neck_y = (y0 + h * 0.18) * n;
      const double hip_x = neck_x, hip_y = (y0 + h * 0.6) * n;
      fill_rect(*img, static_cast<int>(k.points[0].x * n) - 1, static_cast<int>(k.points[0].y * n) - 1,
                static_cast<int>(k.points[0].x * n) + 2, static_cast<int>(k.points[0].y * n) + 2, kPalette[3]);
      draw_line(*img, neck_x, neck_y, hip_x, hip_y);
      draw_line(*img, neck_x, neck_y + 1, k.points[1].x * n, k.points[1].y * n);
      draw_line(*img, neck_x, neck_y + 1, k.points[2].x * n, k.points[2].y * n);
      draw_line(*img, hip_x, hip_y, k.points[3].x * n, k.points[3].y * n - 0.5);
      draw_line(*img, hip_x, hip_y, k.points[4].x * n, k.points[4].y * n - 0.5);
      s.sample.image = img;
    } else {
      std::size_t shapes = 1 + rng.below(static_cast<std::uint64_t>(opt.max_shapes));
      if (tag == TaskTag::classify) shapes = 1;
      a.shapes = place_shapes(rng, n, shapes, pixels);
      if (tag == TaskTag::classify) {
        // One large centred shape.
        const int size = n / 2 + static_cast<int>(rng.below(static_cast<std::uint64_t>(n / 4)));
        const int px = (n - size) / 2, py = (n - size) / 2;
        pixels[0] = {px, py, size};
        a.shapes[0].box = {static_cast<double>(px) / n, static_cast<double>(py) / n,
                           static_cast<double>(px + size) / n, static_cast<double>(py + size) / n};
      }
      s.sample.image = render_scene(n, a.shapes, pixels);
      if (tag == TaskTag::rec || tag == TaskTag::reg) a.target = static_cast<int>(rng.below(a.shapes.size()));
      if (tag == TaskTag::vqa) {
        const auto pick = rng.below(3);
        a.question = VqaQuestion::count;
        if (pick == 1 && (a.target = unique_target(rng, a.shapes, true)) >= 0) a.question = VqaQuestion::color_of;
        if (pick == 2 && (a.target = unique_target(rng, a.shapes, false)) >= 0) a.question = VqaQuestion::shape_of;
        if (a.question == VqaQuestion::count) a.target = -1;
      }
    }
    s.sample.task = tag;
    s.sample.turns = {{Role::user, render_prompt(tag, a)}, {Role::assistant, render_answer(tag, a)}};
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<SyntheticSample> gen_marker_probe(std::uint64_t seed, std::size_t count, int image_size, int grid) {
  if (grid < 1 || image_size % grid != 0 || (image_size / grid) < 4 || (image_size / grid) % 2 != 0)
    throw std::invalid_argument("marker probe needs even cells of at least 4 pixels");
  const int cell = image_size / grid;
  std::vector<SyntheticSample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(mix_seed(mix_seed(seed, 0x6d61726bULL), i));
    SyntheticSample s;
    Annotation& a = s.annotation;
    a.question = VqaQuestion::marker_cell;
    a.marker_row = static_cast<int>(rng.below(grid));
    a.marker_col = static_cast<int>(rng.below(grid));
    const int x = a.marker_col * cell + 2 * static_cast<int>(rng.below(cell / 2));
    const int y = a.marker_row * cell + static_cast<int>(rng.below(cell));
    auto img = std::make_shared<ImageTensor>(image_size, image_size, 0.5);
    for (int c = 0; c < 3; ++c) {
      img->at(y, x, c) = 1.0;
      img->at(y, x + 1, c) = 0.0;
    }
    s.sample.image = img;
    s.sample.task = TaskTag::vqa;
    s.sample.turns = {{Role::user, render_prompt(TaskTag::vqa, a)}, {Role::assistant, render_answer(TaskTag::vqa, a)}};
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<std::string> gen_text_corpus(std::uint64_t seed, std::size_t count, int split) {
  static const char* subjects[] = {"the farmer", "a sailor",    "the old king", "my neighbor",
                                   "the teacher", "a young poet", "the baker",   "our captain"};
  static const char* verbs[] = {"carried", "painted", "found", "sold", "repaired", "borrowed", "opened", "cleaned"};
  static const char* objects[] = {"a wooden boat", "the heavy door", "some fresh bread", "an old map",
                                  "the broken clock", "a long letter", "the iron gate",  "two baskets"};
  static const char* places[] = {"near the river", "in the morning", "after the storm", "by the market",
                                 "before dinner",  "at the harbor",  "during the festival", "under the bridge"};
  if (split != 0 && split != 1) throw std::invalid_argument("text corpus split must be 0 (train) or 1 (held out)");
  Rng rng(mix_seed(seed, 0x74657874ULL + static_cast<std::uint64_t>(split)));
  std::vector<std::string> out;
  out.reserve(count);
  while (out.size() < count) {
    const auto idx = rng.below(4096);
    // Every fifth combination is reserved for the held-out split.
    if ((idx % 5 == 0) != (split == 1)) continue;
    std::string s = std::string(subjects[idx & 7]) + " " + verbs[(idx >> 3) & 7] + " " + objects[(idx >> 6) & 7] +
                    " " + places[(idx >> 9) & 7] + ".";
    s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
    out.push_back(std::move(s));
  }
  return out;
}

void write_manifest(const std::vector<SyntheticSample>& samples, const std::filesystem::path& manifest) {
  const auto dir = manifest.has_parent_path() ? manifest.parent_path() : std::filesystem::path(".");
  std::filesystem::create_directories(dir);
  std::ofstream out(manifest, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write manifest " + manifest.string());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    json j;
    j["task"] = to_string(s.sample.task);
    if (s.sample.image) {
      char name[32];
      std::snprintf(name, sizeof name, "img_%06zu.ppm", i);
      write_ppm(*s.sample.image, dir / name);
      j["image"] = name;
    } else {
      j["image"] = nullptr;
    }
    json turns = json::array();
    for (const auto& t : s.sample.turns)
      turns.push_back({{"role", t.role == Role::user ? "user" : "assistant"}, {"text", t.text}});
    j["turns"] = turns;
    const Annotation& a = s.annotation;
    json ann;
    json shapes = json::array();
    for (const auto& sh : a.shapes)
      shapes.push_back({{"kind", kShapeKinds[sh.kind]}, {"color", kColorNames[sh.color]}, {"box", box_json(sh.box)}});
    ann["shapes"] = shapes;
    ann["target"] = a.target;
    ann["question"] = question_name(a.question);
    ann["caption_style"] = a.caption_style;
    if (a.keypoints) {
      json kp = json::array();
      for (const auto& p : a.keypoints->points) kp.push_back(json::array({p.x, p.y}));
      ann["keypoints"] = kp;
    }
    if (a.person) ann["person"] = box_json(*a.person);
    if (a.marker_row >= 0) ann["marker"] = json::array({a.marker_row, a.marker_col});
    j["annotation"] = ann;
    out << j.dump() << '\n';
  }
}

std::vector<SyntheticSample> read_manifest(const std::filesystem::path& manifest) {
  std::ifstream in(manifest, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open manifest " + manifest.string());
  const auto dir = manifest.has_parent_path() ? manifest.parent_path() : std::filesystem::path(".");
  std::vector<SyntheticSample> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      SyntheticSample s;
      s.sample.task = parse_task_tag(j.at("task").get<std::string>());
      if (!j.at("image").is_null()) {
        s.sample.image_file = j.at("image").get<std::string>();
        s.sample.image = std::make_shared<ImageTensor>(read_ppm(dir / s.sample.image_file));
      }
      for (const auto& t : j.at("turns")) {
        const auto role = t.at("role").get<std::string>();
        if (role != "user" && role != "assistant") throw std::invalid_argument("unknown role " + role);
        s.sample.turns.push_back({role == "user" ? Role::user : Role::assistant, t.at("text").get<std::string>()});
      }
      const json& ann = j.at("annotation");
      Annotation& a = s.annotation;
      for (const auto& sh : ann.at("shapes")) {
        ShapeRecord r;
        const auto kind = sh.at("kind").get<std::string>(), color = sh.at("color").get<std::string>();
        r.kind = static_cast<int>(std::find(std::begin(kShapeKinds), std::end(kShapeKinds), kind) - std::begin(kShapeKinds));
        r.color = static_cast<int>(std::find(std::begin(kColorNames), std::end(kColorNames), color) - std::begin(kColorNames));
        if (r.kind >= 3 || r.color >= 4) throw std::invalid_argument("unknown shape " + color + " " + kind);
        r.box = box_from_json(sh.at("box"));
        a.shapes.push_back(r);
      }
      a.target = ann.at("target").get<int>();
      a.question = parse_question(ann.at("question").get<std::string>());
      a.caption_style = ann.at("caption_style").get<int>();
      if (ann.contains("keypoints")) {
        Keypoints k;
        for (int i = 0; i < 5; ++i) k.points[i] = {ann["keypoints"].at(i).at(0).get<double>(), ann["keypoints"].at(i).at(1).get<double>()};
        a.keypoints = k;
      }
      if (ann.contains("person")) a.person = box_from_json(ann["person"]);
      if (ann.contains("marker")) {
        a.marker_row = ann["marker"].at(0).get<int>();
        a.marker_col = ann["marker"].at(1).get<int>();
      }
      s.sample.validate();
      out.push_back(std::move(s));
    } catch (const std::exception& e) {
      throw std::invalid_argument(manifest.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace mixpipe
