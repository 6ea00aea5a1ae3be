#pragma once

// Analytic stand-in models. Each one is small enough that its saliency
// maps can be derived by hand, which is what the oracle tests rely on.
//
// Region convention for "left"/"right" halves: column x is left when
// 2x+1 < W and right when 2x+1 > W; the middle column of an odd-width image
// belongs to neither.

#include <memory>

#include "langxai/model_zoo.hpp"

namespace langxai::toy {

inline bool in_left_half(std::size_t x, std::size_t width) { return 2 * x + 1 < width; }
inline bool in_right_half(std::size_t x, std::size_t width) { return 2 * x + 1 > width; }

inline Tensor3 intensity_map(const ImageTensor& image) {
  Tensor3 t(1, image.height(), image.width());
  for (std::size_t y = 0; y < image.height(); ++y) {
    for (std::size_t x = 0; x < image.width(); ++x) t.at(0, y, x) = image.intensity(y, x);
  }
  return t;
}

inline std::array<double, 2> half_sums(const ImageTensor& image) {
  std::array<double, 2> sums{0.0, 0.0};
  for (std::size_t y = 0; y < image.height(); ++y) {
    for (std::size_t x = 0; x < image.width(); ++x) {
      if (in_left_half(x, image.width())) sums[0] += image.intensity(y, x);
      if (in_right_half(x, image.width())) sums[1] += image.intensity(y, x);
    }
  }
  return sums;
}

inline int class_of(const TargetSpec& target) {
  const auto* c = std::get_if<ClassTarget>(&target);
  require(c != nullptr, ErrorCode::TargetInvalid, "class target required");
  return c->class_id;
}

/// Classification. Logit of class 0 ("left") is the summed intensity of the
/// left half, class 1 ("right") of the right half; output is their softmax.
/// Explanation layer: the intensity map itself.
class RegionScorer final : public ModelAdapter {
 public:
  static ModelDescriptor describe(std::string id = "toy_region_scorer") {
    return {std::move(id), TaskKind::Classification, {"left", "right"}, true,
            std::nullopt,  "input_intensity",        true};
  }

  Prediction predict(const ImageTensor& image) override {
    const auto sums = half_sums(image);
    return {TaskKind::Classification, softmax(sums), {}};
  }

  FeatureBundle activations_and_gradients(const ImageTensor& image,
                                          const TargetSpec& target) override {
    const int cls = class_of(target);
    FeatureBundle b{intensity_map(image), Tensor3(1, image.height(), image.width()),
                    "input_intensity", target};
    for (std::size_t y = 0; y < image.height(); ++y) {
      for (std::size_t x = 0; x < image.width(); ++x) {
        const bool hit = cls == 0 ? in_left_half(x, image.width()) : in_right_half(x, image.width());
        b.gradients.at(0, y, x) = hit ? 1.0 : 0.0;
      }
    }
    return b;
  }

  double target_score(const ImageTensor& image, const TargetSpec& target) override {
    return half_sums(image)[static_cast<std::size_t>(class_of(target))];
  }
};

/// Classification with one feature map equal to the input intensity.
/// Class 0 ("sum") has logit sum(A); class 1 ("null") is a dead pathway
/// with constant logit 0.
class IdentityConv final : public ModelAdapter {
 public:
  static ModelDescriptor describe(std::string id = "toy_identity_conv") {
    return {std::move(id), TaskKind::Classification, {"sum", "null"}, true,
            std::nullopt,  "identity_conv",           true};
  }

  Prediction predict(const ImageTensor& image) override {
    const std::array<double, 2> logits{total(image), 0.0};
    return {TaskKind::Classification, softmax(logits), {}};
  }

  FeatureBundle activations_and_gradients(const ImageTensor& image,
                                          const TargetSpec& target) override {
    const int cls = class_of(target);
    return {intensity_map(image), Tensor3(1, image.height(), image.width(), cls == 0 ? 1.0 : 0.0),
            "identity_conv", target};
  }

  double target_score(const ImageTensor& image, const TargetSpec& target) override {
    return class_of(target) == 0 ? total(image) : 0.0;
  }

 private:
  static double total(const ImageTensor& image) {
    double s = 0.0;
    for (std::size_t y = 0; y < image.height(); ++y) {
      for (std::size_t x = 0; x < image.width(); ++x) s += image.intensity(y, x);
    }
    return s;
  }
};

/// Detection. Emits one box of side `box_size` centred on the brightest
/// pixel (first in row-major order), clipped to the image, with objectness
/// equal to that pixel's intensity and class probabilities proportional to
/// the left/right half sums. An all-black image yields no detections.
class BoxDetector final : public ModelAdapter {
 public:
  explicit BoxDetector(double box_size = 2.0) : box_size_(box_size) {
    require(box_size_ > 0, ErrorCode::InvalidParameter, "box size must be positive");
  }

  static ModelDescriptor describe(std::string id = "toy_box_detector") {
    return {std::move(id), TaskKind::Detection, {"left", "right"}, false, std::nullopt, "", true};
  }

  Prediction predict(const ImageTensor& image) override {
    std::size_t by = 0, bx = 0;
    double best = -1.0;
    for (std::size_t y = 0; y < image.height(); ++y) {
      for (std::size_t x = 0; x < image.width(); ++x) {
        if (image.intensity(y, x) > best) {
          best = image.intensity(y, x);
          by = y;
          bx = x;
        }
      }
    }
    Prediction p{TaskKind::Detection, Detections{}, {}};
    if (best <= 0.0) return p;

    const double cx = static_cast<double>(bx) + 0.5;
    const double cy = static_cast<double>(by) + 0.5;
    const double half = box_size_ / 2.0;
    const double w = static_cast<double>(image.width());
    const double h = static_cast<double>(image.height());
    BoundingBox box{std::max(0.0, cx - half), std::max(0.0, cy - half), std::min(w, cx + half),
                    std::min(h, cy + half)};

    const auto sums = half_sums(image);
    const double total = sums[0] + sums[1];
    std::vector<double> probs = total > 0.0
                                    ? std::vector<double>{sums[0] / total, sums[1] / total}
                                    : std::vector<double>{0.5, 0.5};
    std::get<Detections>(p.payload).push_back(Detection{box, std::move(probs), best});
    return p;
  }

 private:
  double box_size_;
};

/// Segmentation. Per-pixel logits are (0.5 - A, A - 0.5) for (background,
/// foreground), so the label is 1 exactly where intensity > 0.5.
/// Gradient target: the mean target-class logit over the pixels currently
/// assigned to that class (zero if none are).
class ThresholdSegmenter final : public ModelAdapter {
 public:
  static ModelDescriptor describe(std::string id = "toy_threshold_segmenter") {
    return {std::move(id), TaskKind::Segmentation, {"background", "foreground"}, true,
            std::nullopt,  "input_intensity",                                     true};
  }

  Prediction predict(const ImageTensor& image) override {
    LabelMap map{image.height(), image.width(), std::vector<int>(image.height() * image.width())};
    for (std::size_t y = 0; y < image.height(); ++y) {
      for (std::size_t x = 0; x < image.width(); ++x) {
        map.labels[y * image.width() + x] = image.intensity(y, x) > 0.5 ? 1 : 0;
      }
    }
    return {TaskKind::Segmentation, std::move(map), {}};
  }

  Tensor3 class_probability_map(const ImageTensor& image) override {
    Tensor3 probs(2, image.height(), image.width());
    for (std::size_t y = 0; y < image.height(); ++y) {
      for (std::size_t x = 0; x < image.width(); ++x) {
        const double a = image.intensity(y, x);
        const std::array<double, 2> logits{0.5 - a, a - 0.5};
        const auto p = softmax(logits);
        probs.at(0, y, x) = p[0];
        probs.at(1, y, x) = p[1];
      }
    }
    return probs;
  }

  FeatureBundle activations_and_gradients(const ImageTensor& image,
                                          const TargetSpec& target) override {
    const int cls = class_of(target);
    FeatureBundle b{intensity_map(image), Tensor3(1, image.height(), image.width()),
                    "input_intensity", target};
    const auto members = assigned(image, cls);
    if (members.empty()) return b;
    const double sign = cls == 1 ? 1.0 : -1.0;
    for (std::size_t idx : members) {
      b.gradients.values[idx] = sign / static_cast<double>(members.size());
    }
    return b;
  }

  double target_score(const ImageTensor& image, const TargetSpec& target) override {
    const int cls = class_of(target);
    const auto members = assigned(image, cls);
    if (members.empty()) return 0.0;
    double sum = 0.0;
    for (std::size_t idx : members) {
      const double a = image.intensity(idx / image.width(), idx % image.width());
      sum += cls == 1 ? a - 0.5 : 0.5 - a;
    }
    return sum / static_cast<double>(members.size());
  }

 private:
  static std::vector<std::size_t> assigned(const ImageTensor& image, int cls) {
    std::vector<std::size_t> out;
    for (std::size_t y = 0; y < image.height(); ++y) {
      for (std::size_t x = 0; x < image.width(); ++x) {
        const int label = image.intensity(y, x) > 0.5 ? 1 : 0;
        if (label == cls) out.push_back(y * image.width() + x);
      }
    }
    return out;
  }
};

inline FactoryTable builtin_factories() {
  FactoryTable t;
  t["toy_region_scorer"] = [](const std::string& id, const json&) {
    return LoadedModel{RegionScorer::describe(id), std::make_shared<RegionScorer>()};
  };
  t["toy_identity_conv"] = [](const std::string& id, const json&) {
    return LoadedModel{IdentityConv::describe(id), std::make_shared<IdentityConv>()};
  };
  t["toy_box_detector"] = [](const std::string& id, const json& config) {
    return LoadedModel{BoxDetector::describe(id),
                       std::make_shared<BoxDetector>(config.value("box_size", 2.0))};
  };
  t["toy_threshold_segmenter"] = [](const std::string& id, const json&) {
    return LoadedModel{ThresholdSegmenter::describe(id), std::make_shared<ThresholdSegmenter>()};
  };
  return t;
}

/// Registers the four toy models under their canonical ids.
inline void register_toy_models(ModelRegistry& registry) {
  registry.register_model(RegionScorer::describe(), std::make_shared<RegionScorer>());
  registry.register_model(IdentityConv::describe(), std::make_shared<IdentityConv>());
  registry.register_model(BoxDetector::describe(), std::make_shared<BoxDetector>());
  registry.register_model(ThresholdSegmenter::describe(), std::make_shared<ThresholdSegmenter>());
}

}  // namespace langxai::toy
