#pragma once

// Overlay rendering and the three-stage structured prompt.

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "langxai/blobs.hpp"
#include "langxai/domain.hpp"

namespace langxai {

// ---------------------------------------------------------------------------
// Overlay

using Rgb = std::array<double, 3>;

/// Piecewise-linear ramp through blue, cyan, yellow and red at 0, 1/3, 2/3, 1.
inline Rgb colormap(double v) {
  static constexpr std::array<Rgb, 4> anchors{{{0, 0, 1}, {0, 1, 1}, {1, 1, 0}, {1, 0, 0}}};
  v = std::clamp(v, 0.0, 1.0);
  const double t = v * 3.0;
  const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(t), 2);
  const double f = t - static_cast<double>(k);
  Rgb out{};
  for (std::size_t c = 0; c < 3; ++c) {
    out[c] = anchors[k][c] + f * (anchors[k + 1][c] - anchors[k][c]);
  }
  return out;
}

/// (1 - alpha) * image + alpha * colormap(map), always RGB. Gray input is
/// replicated across the three channels.
inline ImageTensor render_overlay(const ImageTensor& image, const SaliencyMap& map, double alpha) {
  require(map.height == image.height() && map.width == image.width(),
          ErrorCode::DimensionMismatch, "saliency map and image differ in size");
  require(image.channels() == 1 || image.channels() == 3, ErrorCode::DimensionMismatch,
          "overlay needs a gray or RGB image");
  require(std::isfinite(alpha) && alpha >= 0.0 && alpha <= 1.0, ErrorCode::ValueOutOfRange,
          "alpha must lie in [0,1]");
  const std::size_t h = image.height(), w = image.width();
  std::vector<double> out(h * w * 3);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const Rgb heat = colormap(map.at(y, x));
      for (std::size_t c = 0; c < 3; ++c) {
        const double base = image.at(y, x, image.channels() == 1 ? 0 : c);
        out[(y * w + x) * 3 + c] = std::clamp((1.0 - alpha) * base + alpha * heat[c], 0.0, 1.0);
      }
    }
  }
  return ImageTensor(h, w, 3, std::move(out));
}

// ---------------------------------------------------------------------------
// Templates

enum class PromptStage { FocalAreas, PredictionCheck, ReliabilityCheck };

inline std::string_view to_string(PromptStage s) {
  switch (s) {
    case PromptStage::FocalAreas: return "focal_areas";
    case PromptStage::PredictionCheck: return "prediction_check";
    case PromptStage::ReliabilityCheck: return "reliability_check";
  }
  return "?";
}

inline PromptStage parse_stage(std::string_view s) {
  for (auto st : {PromptStage::FocalAreas, PromptStage::PredictionCheck,
                  PromptStage::ReliabilityCheck}) {
    if (s == to_string(st)) return st;
  }
  fail(ErrorCode::ParseError, "unknown prompt stage '" + std::string(s) + "'");
}

inline void to_json(json& j, PromptStage s) { j = std::string(to_string(s)); }
inline void from_json(const json& j, PromptStage& s) { s = parse_stage(j.get<std::string>()); }

inline constexpr std::string_view kDefaultTemplateText = R"(template_id: default-v1
# Sections are named <stage> or <stage>.<task>; the task-specific one wins.
# Placeholders: {prediction} {ground_truth} {task} {target_box} {agreement}

[focal_areas.classification]
The first image is the input to an image classification model. The second image overlays the model's saliency map on it: warm colours mark the pixels that drove the decision, blue marks pixels that did not. Describe the highlighted regions and the objects or textures they cover.

[focal_areas.segmentation]
The first image is the input to a semantic segmentation model. The second image overlays the saliency map for the segment being explained: warm colours mark the pixels that drove that segment, blue marks pixels that did not. Describe the highlighted regions and where they sit relative to the segment.

[focal_areas.detection]
The first image is the input to an object detection model. The second image overlays the saliency map for one detected box: warm colours mark the pixels that drove that detection, blue marks pixels that did not. Describe the highlighted regions and whether they fall inside the box.

[prediction_check.classification]
The model's top-1 class is "{prediction}". Using only the highlighted regions, does the visual evidence support this class? Answer yes or no, then explain briefly.

[prediction_check.segmentation]
The model's dominant segment class is "{prediction}". Using only the highlighted regions, does the visual evidence support labelling those pixels as {prediction}? Answer yes or no, then explain briefly.

[prediction_check.detection]
The model detected "{prediction}" in the box {target_box} (x_min, y_min, x_max, y_max in pixels). Using only the highlighted regions, does the visual evidence support this detection? Answer yes or no, then explain briefly.

[reliability_check]
The ground truth for this {task} image is "{ground_truth}", so the prediction {agreement} the ground truth. Judge how reliable the prediction is given the highlighted evidence, and say whether the model may have been misled by the background or by neighbouring objects.
)";

struct PromptTemplate {
  std::string template_id;
  std::map<std::string, std::string> sections;

  static PromptTemplate parse(std::string_view text, std::string_view source = "template") {
    PromptTemplate t;
    std::string current;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t line_no = 0;
    const auto where = [&] { return std::string(source) + ":" + std::to_string(line_no); };
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.starts_with('#')) continue;
      if (line.starts_with("template_id:")) {
        t.template_id = line.substr(12);
        t.template_id.erase(0, t.template_id.find_first_not_of(' '));
        continue;
      }
      if (line.starts_with('[')) {
        require(line.back() == ']', ErrorCode::ParseError, where() + ": unterminated section");
        current = line.substr(1, line.size() - 2);
        require(!t.sections.contains(current), ErrorCode::ParseError,
                where() + ": duplicate section " + current);
        t.sections[current];
        continue;
      }
      if (current.empty()) {
        require(line.empty(), ErrorCode::ParseError, where() + ": text outside a section");
        continue;
      }
      auto& body = t.sections[current];
      if (!body.empty() || !line.empty()) body += line + "\n";
    }
    require(!t.template_id.empty(), ErrorCode::ParseError, std::string(source) + ": no template_id");
    for (auto& [name, body] : t.sections) {
      while (!body.empty() && (body.back() == '\n' || body.back() == ' ')) body.pop_back();
    }
    for (auto stage : {PromptStage::FocalAreas, PromptStage::PredictionCheck,
                       PromptStage::ReliabilityCheck}) {
      for (auto task : {TaskKind::Classification, TaskKind::Segmentation, TaskKind::Detection}) {
        t.section(stage, task);
      }
    }
    return t;
  }

  /// `<stage>.<task>` when present, else `<stage>`.
  const std::string& section(PromptStage stage, TaskKind task) const {
    const std::string base(to_string(stage));
    if (auto it = sections.find(base + "." + std::string(to_string(task))); it != sections.end()) {
      return it->second;
    }
    auto it = sections.find(base);
    require(it != sections.end(), ErrorCode::ParseError,
            "template " + template_id + " has no section for " + base + " / " +
                std::string(to_string(task)));
    return it->second;
  }
};

inline const PromptTemplate& default_template() {
  static const PromptTemplate t = PromptTemplate::parse(kDefaultTemplateText, "default-v1");
  return t;
}

inline PromptTemplate load_template(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::NotFound, "cannot read template " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return PromptTemplate::parse(text.str(), path.string());
}

/// Replaces every {name}; an unknown name is an error.
inline std::string fill_placeholders(std::string_view text,
                                     const std::map<std::string, std::string>& values) {
  std::string out;
  std::size_t i = 0;
  while (i < text.size()) {
    const std::size_t open = text.find('{', i);
    if (open == std::string_view::npos) {
      out.append(text.substr(i));
      break;
    }
    out.append(text.substr(i, open - i));
    const std::size_t close = text.find('}', open);
    require(close != std::string_view::npos, ErrorCode::ParseError, "unterminated placeholder");
    const std::string name(text.substr(open + 1, close - open - 1));
    auto it = values.find(name);
    require(it != values.end(), ErrorCode::ParseError, "unknown placeholder {" + name + "}");
    out += it->second;
    i = close + 1;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Verdict and prompt facts

/// Unverified: no ground truth was supplied.
enum class Verdict { Match, Mismatch, Unverified };

inline std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::Match: return "match";
    case Verdict::Mismatch: return "mismatch";
    case Verdict::Unverified: return "unverified";
  }
  return "unverified";
}
inline Verdict parse_verdict(std::string_view s) {
  if (s == "match") return Verdict::Match;
  if (s == "mismatch") return Verdict::Mismatch;
  if (s == "unverified") return Verdict::Unverified;
  fail(ErrorCode::ParseError, "unknown verdict '" + std::string(s) + "'");
}
inline void to_json(json& j, Verdict v) { j = std::string(to_string(v)); }
inline void from_json(const json& j, Verdict& v) { v = parse_verdict(j.get<std::string>()); }

inline std::string label_name(const std::vector<std::string>& labels, std::size_t id) {
  if (id < labels.size() && !labels[id].empty()) return labels[id];
  return "class " + std::to_string(id);
}

inline std::string format_box(const BoundingBox& b) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "(%.2f, %.2f, %.2f, %.2f)", b.x_min, b.y_min, b.x_max, b.y_max);
  return buf;
}

/// The prediction as the prompt names it, compared against ground truth.
/// Classification and segmentation use the top-1 class (dominant segment
/// for maps); detection uses the targeted detection, which matches when a
/// ground-truth box of the same class overlaps it with IoU >= 0.5.
/// Without ground truth the verdict is Unverified.
struct PromptFacts {
  std::string prediction;
  std::string ground_truth;
  std::string target_box = "none";
  Verdict verdict = Verdict::Mismatch;

  std::map<std::string, std::string> placeholders(TaskKind task) const {
    return {{"prediction", prediction},
            {"ground_truth", ground_truth},
            {"task", std::string(to_string(task))},
            {"target_box", target_box},
            {"agreement", verdict == Verdict::Match      ? "matches"
                          : verdict == Verdict::Mismatch ? "does not match"
                                                         : "is not checked against"}};
  }
};

inline constexpr double kDetectionMatchIou = 0.5;

inline PromptFacts derive_facts(TaskKind task, const Prediction& prediction,
                                const TargetSpec& target,
                                const std::optional<GroundTruth>& truth,
                                const std::vector<std::string>& labels) {
  require(prediction.task == task, ErrorCode::TaskMismatch,
          "prediction is for " + std::string(to_string(prediction.task)) + ", prompt for " +
              std::string(to_string(task)));
  if (truth) {
    require(truth->task == task, ErrorCode::TaskMismatch,
            "ground truth is for " + std::string(to_string(truth->task)) + ", prompt for " +
                std::string(to_string(task)));
    truth->validate();
  }
  PromptFacts f;
  if (!truth) {
    f.ground_truth = "not provided";
    f.verdict = Verdict::Unverified;
  }
  switch (task) {
    case TaskKind::Classification: {
      const std::size_t top = argmax(prediction.class_probs());
      f.prediction = label_name(labels, top);
      if (!truth) break;
      const auto& gt = std::get<ClassLabel>(truth->payload);
      f.ground_truth = gt.label.empty() ? label_name(labels, static_cast<std::size_t>(gt.class_id))
                                        : gt.label;
      f.verdict = static_cast<int>(top) == gt.class_id ? Verdict::Match : Verdict::Mismatch;
      break;
    }
    case TaskKind::Segmentation: {
      const std::size_t top = dominant_segment(prediction.label_map());
      f.prediction = label_name(labels, top);
      if (!truth) break;
      const std::size_t want = dominant_segment(std::get<LabelMap>(truth->payload));
      f.ground_truth = label_name(labels, want);
      f.verdict = top == want ? Verdict::Match : Verdict::Mismatch;
      break;
    }
    case TaskKind::Detection: {
      const auto* t = std::get_if<DetectionTarget>(&target);
      require(t != nullptr, ErrorCode::TaskMismatch, "detection prompts need a detection target");
      const std::size_t cls = argmax(t->detection.class_probs);
      f.prediction = label_name(labels, cls);
      f.target_box = format_box(t->detection.box);
      if (!truth) break;
      const auto& gts = std::get<Detections>(truth->payload);
      std::string text;
      for (const auto& g : gts) {
        const std::size_t gcls = argmax(g.class_probs);
        if (!text.empty()) text += "; ";
        text += label_name(labels, gcls) + " at " + format_box(g.box);
        if (gcls == cls && iou(g.box, t->detection.box) >= kDetectionMatchIou) {
          f.verdict = Verdict::Match;
        }
      }
      f.ground_truth = text.empty() ? "no objects" : text;
      break;
    }
  }
  return f;
}

// ---------------------------------------------------------------------------
// Prompt bundle

struct MessagePart {
  enum class Kind { Text, ImageRef };
  Kind kind = Kind::Text;
  std::string value;  // text, or the blob id of a PNG
  friend bool operator==(const MessagePart&, const MessagePart&) = default;
};

struct PromptBundle {
  TaskKind task = TaskKind::Classification;
  std::string template_id;
  std::vector<MessagePart> parts;
  std::vector<PromptStage> stage_tags;  // parallel to parts
  /// Structured values substituted into the text, plus verdict_hint.
  std::map<std::string, std::string> facts;
  friend bool operator==(const PromptBundle&, const PromptBundle&) = default;
};

inline void to_json(json& j, const MessagePart& p) {
  if (p.kind == MessagePart::Kind::Text) {
    j = json{{"type", "text"}, {"text", p.value}};
  } else {
    j = json{{"type", "image_ref"}, {"image_ref", p.value}};
  }
}
inline void from_json(const json& j, MessagePart& p) {
  const auto type = j.at("type").get<std::string>();
  if (type == "text") {
    p = {MessagePart::Kind::Text, j.at("text").get<std::string>()};
  } else if (type == "image_ref") {
    p = {MessagePart::Kind::ImageRef, j.at("image_ref").get<std::string>()};
  } else {
    fail(ErrorCode::ParseError, "unknown message part type '" + type + "'");
  }
}
inline void to_json(json& j, const PromptBundle& b) {
  j = json{{"task", b.task},         {"template_id", b.template_id}, {"parts", b.parts},
           {"stage_tags", b.stage_tags}, {"facts", b.facts}};
}
inline void from_json(const json& j, PromptBundle& b) {
  b.task = j.at("task").get<TaskKind>();
  b.template_id = j.at("template_id").get<std::string>();
  b.parts = j.at("parts").get<std::vector<MessagePart>>();
  b.stage_tags = j.at("stage_tags").get<std::vector<PromptStage>>();
  b.facts = j.value("facts", std::map<std::string, std::string>{});
}

struct PromptInputs {
  TaskKind task = TaskKind::Classification;
  std::string image_ref;
  std::string overlay_ref;
  Prediction prediction;
  TargetSpec target;
  std::optional<GroundTruth> ground_truth;  // nullopt: no reliability check
  std::vector<std::string> label_set;
};

inline PromptBundle build_prompt(const PromptInputs& in, const BlobStore& blobs,
                                 const PromptTemplate& tmpl = default_template()) {
  for (const auto* ref : {&in.image_ref, &in.overlay_ref}) {
    require(is_blob_id(*ref) && blobs.contains(*ref), ErrorCode::UnresolvableRef,
            "image reference '" + *ref + "' does not resolve");
  }
  const PromptFacts facts = derive_facts(in.task, in.prediction, in.target, in.ground_truth,
                                         in.label_set);
  const auto values = facts.placeholders(in.task);

  PromptBundle b;
  b.task = in.task;
  b.template_id = tmpl.template_id;
  const auto add = [&b](PromptStage stage, MessagePart::Kind kind, std::string value) {
    b.parts.push_back({kind, std::move(value)});
    b.stage_tags.push_back(stage);
  };
  const auto text = [&](PromptStage stage) {
    return fill_placeholders(tmpl.section(stage, in.task), values);
  };
  add(PromptStage::FocalAreas, MessagePart::Kind::ImageRef, in.image_ref);
  add(PromptStage::FocalAreas, MessagePart::Kind::ImageRef, in.overlay_ref);
  add(PromptStage::FocalAreas, MessagePart::Kind::Text, text(PromptStage::FocalAreas));
  add(PromptStage::PredictionCheck, MessagePart::Kind::Text, text(PromptStage::PredictionCheck));
  if (in.ground_truth) {
    add(PromptStage::ReliabilityCheck, MessagePart::Kind::Text,
        text(PromptStage::ReliabilityCheck));
  }
  b.facts = values;
  b.facts["verdict_hint"] = std::string(to_string(facts.verdict));
  return b;
}

}  // namespace langxai
