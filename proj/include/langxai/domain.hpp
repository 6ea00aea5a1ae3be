#pragma once

// Core value types shared by every module. Values validate on construction
// and are immutable afterwards.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "langxai/error.hpp"

namespace langxai {

using json = nlohmann::json;

enum class TaskKind { Classification, Segmentation, Detection };

inline std::string_view to_string(TaskKind task) {
  switch (task) {
    case TaskKind::Classification: return "classification";
    case TaskKind::Segmentation: return "segmentation";
    case TaskKind::Detection: return "detection";
  }
  return "classification";
}

inline TaskKind parse_task(std::string_view s) {
  if (s == "classification") return TaskKind::Classification;
  if (s == "segmentation") return TaskKind::Segmentation;
  if (s == "detection") return TaskKind::Detection;
  fail(ErrorCode::InvalidValue, "unknown task '" + std::string(s) + "'");
}

enum class Mechanism { Gradient, Perturbation };

inline std::string_view to_string(Mechanism m) {
  return m == Mechanism::Gradient ? "gradient" : "perturbation";
}

inline Mechanism parse_mechanism(std::string_view s) {
  if (s == "gradient") return Mechanism::Gradient;
  if (s == "perturbation") return Mechanism::Perturbation;
  fail(ErrorCode::InvalidValue, "unknown mechanism '" + std::string(s) + "'");
}

struct ImageSize {
  std::size_t height = 0;
  std::size_t width = 0;
  friend bool operator==(const ImageSize&, const ImageSize&) = default;
};

/// H x W x C pixels in [0,1], row-major, channels interleaved.
class ImageTensor {
 public:
  ImageTensor(std::size_t height, std::size_t width, std::size_t channels,
              std::vector<double> data)
      : height_(height), width_(width), channels_(channels), data_(std::move(data)) {
    require(height_ > 0 && width_ > 0, ErrorCode::DimensionMismatch,
            "image dimensions must be positive");
    require(channels_ == 1 || channels_ == 3, ErrorCode::DimensionMismatch,
            "image must have 1 or 3 channels");
    require(data_.size() == height_ * width_ * channels_, ErrorCode::DimensionMismatch,
            "pixel buffer length " + std::to_string(data_.size()) + " != " +
                std::to_string(height_ * width_ * channels_));
    for (double v : data_) {
      require(std::isfinite(v) && v >= 0.0 && v <= 1.0, ErrorCode::ValueOutOfRange,
              "pixel value outside [0,1]");
    }
  }

  static ImageTensor filled(std::size_t height, std::size_t width, std::size_t channels,
                            double value) {
    return ImageTensor(height, width, channels,
                       std::vector<double>(height * width * channels, value));
  }

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t channels() const noexcept { return channels_; }
  ImageSize size() const noexcept { return {height_, width_}; }
  std::span<const double> data() const noexcept { return data_; }

  double at(std::size_t y, std::size_t x, std::size_t c = 0) const {
    return data_[(y * width_ + x) * channels_ + c];
  }

  /// Mean over channels at one pixel (the grayscale intensity).
  double intensity(std::size_t y, std::size_t x) const {
    double sum = 0.0;
    for (std::size_t c = 0; c < channels_; ++c) sum += at(y, x, c);
    return sum / static_cast<double>(channels_);
  }

  friend bool operator==(const ImageTensor&, const ImageTensor&) = default;

 private:
  std::size_t height_;
  std::size_t width_;
  std::size_t channels_;
  std::vector<double> data_;
};

/// Builds an ImageTensor from integer pixels in [0,255], scaling by 1/255.
inline ImageTensor validate_image(std::span<const int> raw, ImageSize dims,
                                  std::size_t channels) {
  require(raw.size() == dims.height * dims.width * channels, ErrorCode::DimensionMismatch,
          "buffer length " + std::to_string(raw.size()) + " does not match " +
              std::to_string(dims.height) + "x" + std::to_string(dims.width) + "x" +
              std::to_string(channels));
  std::vector<double> data(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    require(raw[i] >= 0 && raw[i] <= 255, ErrorCode::ValueOutOfRange,
            "integer pixel " + std::to_string(raw[i]) + " outside [0,255]");
    data[i] = static_cast<double>(raw[i]) / 255.0;
  }
  return ImageTensor(dims.height, dims.width, channels, std::move(data));
}

inline ImageTensor validate_image(std::span<const std::uint8_t> raw, ImageSize dims,
                                  std::size_t channels) {
  std::vector<int> widened(raw.begin(), raw.end());
  return validate_image(std::span<const int>(widened), dims, channels);
}

/// Real-valued input must already be finite and inside [0,1].
inline ImageTensor validate_image(std::span<const double> raw, ImageSize dims,
                                  std::size_t channels) {
  require(raw.size() == dims.height * dims.width * channels, ErrorCode::DimensionMismatch,
          "buffer length " + std::to_string(raw.size()) + " does not match declared dims");
  for (double v : raw) {
    require(std::isfinite(v) && v >= 0.0 && v <= 1.0, ErrorCode::ValueOutOfRange,
            "real pixel outside [0,1] or non-finite");
  }
  return ImageTensor(dims.height, dims.width, channels,
                     std::vector<double>(raw.begin(), raw.end()));
}

/// Half-open pixel rectangle.
struct BoundingBox {
  double x_min = 0, y_min = 0, x_max = 0, y_max = 0;

  void validate() const {
    require(std::isfinite(x_min) && std::isfinite(y_min) && std::isfinite(x_max) &&
                std::isfinite(y_max),
            ErrorCode::InvalidValue, "box coordinates must be finite");
    require(x_min < x_max && y_min < y_max, ErrorCode::InvalidValue,
            "box must have x_min < x_max and y_min < y_max");
    require(x_min >= 0 && y_min >= 0, ErrorCode::InvalidValue,
            "box coordinates must be non-negative");
  }
  double area() const { return (x_max - x_min) * (y_max - y_min); }
  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

inline double iou(const BoundingBox& a, const BoundingBox& b) {
  const double ix = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double iy = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (ix <= 0 || iy <= 0) return 0.0;
  const double inter = ix * iy;
  return inter / (a.area() + b.area() - inter);
}

inline void validate_probabilities(std::span<const double> probs, std::string_view what) {
  require(!probs.empty(), ErrorCode::EmptyPrediction, std::string(what) + " is empty");
  double sum = 0.0;
  for (double p : probs) {
    require(std::isfinite(p) && p >= 0.0, ErrorCode::InvalidValue,
            std::string(what) + " has a negative or non-finite entry");
    sum += p;
  }
  require(std::abs(sum - 1.0) <= 1e-6, ErrorCode::InvalidValue,
          std::string(what) + " does not sum to 1");
}

struct Detection {
  BoundingBox box;
  std::vector<double> class_probs;
  double objectness = 1.0;

  void validate() const {
    box.validate();
    validate_probabilities(class_probs, "detection class_probs");
    require(std::isfinite(objectness) && objectness >= 0.0 && objectness <= 1.0,
            ErrorCode::InvalidValue, "objectness outside [0,1]");
  }
  friend bool operator==(const Detection&, const Detection&) = default;
};

/// H x W grid of class ids, row-major.
struct LabelMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<int> labels;

  int at(std::size_t y, std::size_t x) const { return labels[y * width + x]; }
  void validate() const {
    require(height > 0 && width > 0 && labels.size() == height * width,
            ErrorCode::DimensionMismatch, "label map size does not match its dimensions");
    for (int l : labels) require(l >= 0, ErrorCode::InvalidValue, "negative class id");
  }
  friend bool operator==(const LabelMap&, const LabelMap&) = default;
};

using ClassProbs = std::vector<double>;
using Detections = std::vector<Detection>;

struct Prediction {
  TaskKind task = TaskKind::Classification;
  std::variant<ClassProbs, LabelMap, Detections> payload;
  std::string model_id;

  const ClassProbs& class_probs() const { return std::get<ClassProbs>(payload); }
  const LabelMap& label_map() const { return std::get<LabelMap>(payload); }
  const Detections& detections() const { return std::get<Detections>(payload); }

  void validate() const {
    switch (task) {
      case TaskKind::Classification:
        require(std::holds_alternative<ClassProbs>(payload), ErrorCode::TaskMismatch,
                "classification prediction needs class_probs");
        validate_probabilities(class_probs(), "class_probs");
        break;
      case TaskKind::Segmentation:
        require(std::holds_alternative<LabelMap>(payload), ErrorCode::TaskMismatch,
                "segmentation prediction needs label_map");
        label_map().validate();
        break;
      case TaskKind::Detection:
        require(std::holds_alternative<Detections>(payload), ErrorCode::TaskMismatch,
                "detection prediction needs detections");
        for (const auto& d : detections()) d.validate();
        break;
    }
  }
  friend bool operator==(const Prediction&, const Prediction&) = default;
};

/// Index of the largest entry; ties go to the lowest index.
inline std::size_t argmax(std::span<const double> values) {
  require(!values.empty(), ErrorCode::EmptyPrediction, "argmax of empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

/// Most frequent class in a label map, ignoring background (0) whenever any
/// other class is present. Ties go to the lowest id.
inline std::size_t dominant_segment(const LabelMap& map) {
  require(!map.labels.empty(), ErrorCode::EmptyPrediction, "empty label map");
  const int max_label = *std::max_element(map.labels.begin(), map.labels.end());
  std::vector<double> counts(static_cast<std::size_t>(max_label) + 1, 0.0);
  for (int l : map.labels) counts[static_cast<std::size_t>(l)] += 1.0;
  if (counts.size() > 1) {
    std::vector<double> foreground(counts.begin() + 1, counts.end());
    if (std::any_of(foreground.begin(), foreground.end(), [](double c) { return c > 0; })) {
      return argmax(foreground) + 1;
    }
  }
  return 0;
}

/// Classification: {argmax}; detection: per-detection argmax; segmentation:
/// {dominant_segment}.
inline std::vector<std::size_t> top1(const Prediction& pred) {
  switch (pred.task) {
    case TaskKind::Classification:
      return {argmax(pred.class_probs())};
    case TaskKind::Segmentation:
      return {dominant_segment(pred.label_map())};
    case TaskKind::Detection: {
      const auto& dets = pred.detections();
      require(!dets.empty(), ErrorCode::EmptyPrediction, "prediction has no detections");
      std::vector<std::size_t> out;
      out.reserve(dets.size());
      for (const auto& d : dets) out.push_back(argmax(d.class_probs));
      return out;
    }
  }
  return {};
}

struct ClassTarget {
  int class_id = 0;
  friend bool operator==(const ClassTarget&, const ClassTarget&) = default;
};

struct DetectionTarget {
  std::size_t detection_index = 0;
  Detection detection;
  friend bool operator==(const DetectionTarget&, const DetectionTarget&) = default;
};

using TargetSpec = std::variant<ClassTarget, DetectionTarget>;

/// H x W real grid, row-major.
struct Map2D {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;

  Map2D() = default;
  Map2D(std::size_t h, std::size_t w, double fill = 0.0)
      : height(h), width(w), values(h * w, fill) {}
  Map2D(std::size_t h, std::size_t w, std::vector<double> v)
      : height(h), width(w), values(std::move(v)) {
    require(values.size() == height * width, ErrorCode::ShapeMismatch,
            "map values do not match dimensions");
  }
  double& at(std::size_t y, std::size_t x) { return values[y * width + x]; }
  double at(std::size_t y, std::size_t x) const { return values[y * width + x]; }
  friend bool operator==(const Map2D&, const Map2D&) = default;
};

struct SaliencyMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;
  std::string method_id;
  TargetSpec target;
  Mechanism mechanism = Mechanism::Gradient;

  double at(std::size_t y, std::size_t x) const { return values[y * width + x]; }
  void validate() const {
    require(height > 0 && width > 0 && values.size() == height * width,
            ErrorCode::ShapeMismatch, "saliency values do not match dimensions");
    for (double v : values) {
      require(std::isfinite(v) && v >= 0.0 && v <= 1.0, ErrorCode::ValueOutOfRange,
              "saliency value outside [0,1]");
    }
  }
  friend bool operator==(const SaliencyMap&, const SaliencyMap&) = default;
};

struct ClassLabel {
  int class_id = 0;
  std::string label;  // display name; may be empty
  friend bool operator==(const ClassLabel&, const ClassLabel&) = default;
};

struct GroundTruth {
  TaskKind task = TaskKind::Classification;
  std::variant<ClassLabel, LabelMap, Detections> payload;

  void validate() const {
    const bool ok = (task == TaskKind::Classification &&
                     std::holds_alternative<ClassLabel>(payload)) ||
                    (task == TaskKind::Segmentation && std::holds_alternative<LabelMap>(payload)) ||
                    (task == TaskKind::Detection && std::holds_alternative<Detections>(payload));
    require(ok, ErrorCode::TaskMismatch, "ground truth payload does not match its task");
    if (auto* m = std::get_if<LabelMap>(&payload)) m->validate();
    if (auto* d = std::get_if<Detections>(&payload)) {
      for (const auto& det : *d) det.validate();
    }
  }
  friend bool operator==(const GroundTruth&, const GroundTruth&) = default;
};

/// Ground-truth detection: one-hot class vector, objectness 1.
inline Detection make_gt_detection(const BoundingBox& box, std::size_t class_id,
                                   std::size_t num_classes) {
  require(class_id < num_classes, ErrorCode::InvalidValue, "class id outside label set");
  Detection d{box, std::vector<double>(num_classes, 0.0), 1.0};
  d.class_probs[class_id] = 1.0;
  d.validate();
  return d;
}

// ---------------------------------------------------------------------------
// Canonical JSON shapes.

inline void to_json(json& j, TaskKind t) { j = std::string(to_string(t)); }
inline void from_json(const json& j, TaskKind& t) { t = parse_task(j.get<std::string>()); }

inline void to_json(json& j, Mechanism m) { j = std::string(to_string(m)); }
inline void from_json(const json& j, Mechanism& m) {
  m = parse_mechanism(j.get<std::string>());
}

inline void to_json(json& j, const ImageTensor& img) {
  j = json{{"height", img.height()},
           {"width", img.width()},
           {"channels", img.channels()},
           {"data", std::vector<double>(img.data().begin(), img.data().end())}};
}

inline ImageTensor image_from_json(const json& j) {
  return ImageTensor(j.at("height").get<std::size_t>(), j.at("width").get<std::size_t>(),
                     j.at("channels").get<std::size_t>(),
                     j.at("data").get<std::vector<double>>());
}

inline void to_json(json& j, const BoundingBox& b) {
  j = json{{"x_min", b.x_min}, {"y_min", b.y_min}, {"x_max", b.x_max}, {"y_max", b.y_max}};
}
inline void from_json(const json& j, BoundingBox& b) {
  b.x_min = j.at("x_min").get<double>();
  b.y_min = j.at("y_min").get<double>();
  b.x_max = j.at("x_max").get<double>();
  b.y_max = j.at("y_max").get<double>();
  b.validate();
}

inline void to_json(json& j, const Detection& d) {
  j = json{{"box", d.box}, {"class_probs", d.class_probs}, {"objectness", d.objectness}};
}
inline void from_json(const json& j, Detection& d) {
  d.box = j.at("box").get<BoundingBox>();
  d.class_probs = j.at("class_probs").get<std::vector<double>>();
  d.objectness = j.value("objectness", 1.0);
  d.validate();
}

inline void to_json(json& j, const LabelMap& m) {
  j = json{{"height", m.height}, {"width", m.width}, {"data", m.labels}};
}
inline void from_json(const json& j, LabelMap& m) {
  m.height = j.at("height").get<std::size_t>();
  m.width = j.at("width").get<std::size_t>();
  m.labels = j.at("data").get<std::vector<int>>();
  m.validate();
}

inline void to_json(json& j, const Prediction& p) {
  j = json{{"task", p.task}, {"model_id", p.model_id}};
  std::visit(
      [&](const auto& payload) {
        using T = std::decay_t<decltype(payload)>;
        if constexpr (std::is_same_v<T, ClassProbs>) j["class_probs"] = payload;
        if constexpr (std::is_same_v<T, LabelMap>) j["label_map"] = payload;
        if constexpr (std::is_same_v<T, Detections>) j["detections"] = payload;
      },
      p.payload);
}
inline void from_json(const json& j, Prediction& p) {
  p.task = j.at("task").get<TaskKind>();
  p.model_id = j.value("model_id", std::string{});
  switch (p.task) {
    case TaskKind::Classification:
      p.payload = j.at("class_probs").get<ClassProbs>();
      break;
    case TaskKind::Segmentation:
      p.payload = j.at("label_map").get<LabelMap>();
      break;
    case TaskKind::Detection:
      p.payload = j.at("detections").get<Detections>();
      break;
  }
  p.validate();
}

inline void to_json(json& j, const TargetSpec& t) {
  if (auto* c = std::get_if<ClassTarget>(&t)) {
    j = json{{"class_id", c->class_id}};
  } else {
    const auto& d = std::get<DetectionTarget>(t);
    j = json{{"detection_index", d.detection_index}, {"detection", d.detection}};
  }
}
inline void from_json(const json& j, TargetSpec& t) {
  if (j.contains("detection_index")) {
    DetectionTarget d;
    d.detection_index = j.at("detection_index").get<std::size_t>();
    if (j.contains("detection")) d.detection = j.at("detection").get<Detection>();
    t = d;
  } else {
    t = ClassTarget{j.at("class_id").get<int>()};
  }
}

inline void to_json(json& j, const SaliencyMap& s) {
  j = json{{"height", s.height},       {"width", s.width},
           {"values", s.values},       {"method_id", s.method_id},
           {"target", s.target},       {"mechanism", s.mechanism}};
}
inline void from_json(const json& j, SaliencyMap& s) {
  s.height = j.at("height").get<std::size_t>();
  s.width = j.at("width").get<std::size_t>();
  s.values = j.at("values").get<std::vector<double>>();
  s.method_id = j.at("method_id").get<std::string>();
  s.target = j.at("target").get<TargetSpec>();
  s.mechanism = j.at("mechanism").get<Mechanism>();
  s.validate();
}

inline void to_json(json& j, const GroundTruth& g) {
  j = json{{"task", g.task}};
  if (auto* c = std::get_if<ClassLabel>(&g.payload)) {
    j["class_id"] = c->class_id;
    if (!c->label.empty()) j["label"] = c->label;
  } else if (auto* m = std::get_if<LabelMap>(&g.payload)) {
    j["label_map"] = *m;
  } else {
    j["detections"] = std::get<Detections>(g.payload);
  }
}
inline void from_json(const json& j, GroundTruth& g) {
  g.task = j.at("task").get<TaskKind>();
  switch (g.task) {
    case TaskKind::Classification:
      g.payload = ClassLabel{j.at("class_id").get<int>(), j.value("label", std::string{})};
      break;
    case TaskKind::Segmentation:
      g.payload = j.at("label_map").get<LabelMap>();
      break;
    case TaskKind::Detection:
      g.payload = j.at("detections").get<Detections>();
      break;
  }
  g.validate();
}

}  // namespace langxai
