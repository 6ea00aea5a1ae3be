#pragma once

// Uniform adapter contract over vision models plus a thread-safe registry.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

#include "langxai/domain.hpp"

namespace langxai {

struct ModelDescriptor {
  std::string model_id;
  TaskKind task = TaskKind::Classification;
  std::vector<std::string> label_set;
  bool supports_gradients = false;
  std::optional<ImageSize> input_size;  // nullopt: any size
  std::string explanation_layer;        // the single CAM layer, if any
  bool concurrent_safe = true;          // false: registry serializes calls
};

inline void to_json(json& j, const ModelDescriptor& d) {
  j = json{{"model_id", d.model_id},
           {"task", d.task},
           {"label_set", d.label_set},
           {"supports_gradients", d.supports_gradients},
           {"explanation_layer", d.explanation_layer}};
  if (d.input_size) {
    j["input_size"] = {d.input_size->height, d.input_size->width};
  } else {
    j["input_size"] = nullptr;
  }
}

/// K x h x w activations or gradients, channel-major.
struct Tensor3 {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;

  Tensor3() = default;
  Tensor3(std::size_t k, std::size_t h, std::size_t w, double fill = 0.0)
      : channels(k), height(h), width(w), values(k * h * w, fill) {}
  Tensor3(std::size_t k, std::size_t h, std::size_t w, std::vector<double> v)
      : channels(k), height(h), width(w), values(std::move(v)) {
    require(values.size() == k * h * w, ErrorCode::ShapeMismatch,
            "tensor values do not match dimensions");
  }

  double& at(std::size_t k, std::size_t y, std::size_t x) {
    return values[(k * height + y) * width + x];
  }
  double at(std::size_t k, std::size_t y, std::size_t x) const {
    return values[(k * height + y) * width + x];
  }
  std::span<const double> channel(std::size_t k) const {
    return std::span<const double>(values).subspan(k * height * width, height * width);
  }
  bool same_shape(const Tensor3& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }
  friend bool operator==(const Tensor3&, const Tensor3&) = default;
};

/// Activations A^k of the explanation layer with dy_target/dA^k.
struct FeatureBundle {
  Tensor3 feature_maps;
  Tensor3 gradients;
  std::string layer_id;
  TargetSpec target;

  void validate() const {
    require(feature_maps.same_shape(gradients), ErrorCode::ShapeMismatch,
            "feature maps and gradients differ in shape");
    require(feature_maps.channels > 0 && feature_maps.height > 0 && feature_maps.width > 0,
            ErrorCode::ShapeMismatch, "empty feature bundle");
    require(feature_maps.values.size() ==
                    feature_maps.channels * feature_maps.height * feature_maps.width &&
                gradients.values.size() == feature_maps.values.size(),
            ErrorCode::ShapeMismatch, "feature bundle buffers do not match their shape");
    for (double v : feature_maps.values) {
      require(std::isfinite(v), ErrorCode::NonFiniteInput, "non-finite activation");
    }
    for (double v : gradients.values) {
      require(std::isfinite(v), ErrorCode::NonFiniteInput, "non-finite gradient");
    }
  }
};

inline std::vector<double> softmax(std::span<const double> logits) {
  const double peak = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - peak);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

/// A model behind the registry. Implementations normalize their own inputs.
class ModelAdapter {
 public:
  virtual ~ModelAdapter() = default;

  virtual Prediction predict(const ImageTensor& image) = 0;

  virtual std::vector<Prediction> predict_batch(std::span<const ImageTensor> images) {
    std::vector<Prediction> out;
    out.reserve(images.size());
    for (const auto& img : images) out.push_back(predict(img));
    return out;
  }

  virtual FeatureBundle activations_and_gradients(const ImageTensor&, const TargetSpec&) {
    fail(ErrorCode::GradientsUnsupported, "adapter does not expose gradients");
  }

  /// The scalar y whose gradient activations_and_gradients reports.
  virtual double target_score(const ImageTensor&, const TargetSpec&) {
    fail(ErrorCode::GradientsUnsupported, "adapter does not expose a target score");
  }

  /// Segmentation only: per-pixel class probabilities, C x H x W.
  virtual Tensor3 class_probability_map(const ImageTensor&) {
    fail(ErrorCode::AdapterFailure, "adapter does not expose per-pixel probabilities");
  }
};

/// Throws TargetInvalid unless the target fits the model (and, for
/// detection targets, the given prediction).
inline void check_target(const ModelDescriptor& desc, const TargetSpec& target,
                         const Prediction* prediction = nullptr) {
  if (auto* c = std::get_if<ClassTarget>(&target)) {
    require(desc.task != TaskKind::Detection, ErrorCode::TargetInvalid,
            "detection models need a detection target");
    require(c->class_id >= 0 && static_cast<std::size_t>(c->class_id) < desc.label_set.size(),
            ErrorCode::TargetInvalid,
            "class id " + std::to_string(c->class_id) + " outside label set of " + desc.model_id);
    return;
  }
  const auto& d = std::get<DetectionTarget>(target);
  require(desc.task == TaskKind::Detection, ErrorCode::TargetInvalid,
          "detection target given for a non-detection model");
  require(d.detection.class_probs.size() == desc.label_set.size(), ErrorCode::TargetInvalid,
          "target detection snapshot does not match the label set");
  if (prediction != nullptr) {
    require(d.detection_index < prediction->detections().size(), ErrorCode::TargetInvalid,
            "detection index " + std::to_string(d.detection_index) + " out of range");
  }
}

class ModelRegistry {
 public:
  std::string register_model(ModelDescriptor descriptor, std::shared_ptr<ModelAdapter> adapter) {
    require(!descriptor.label_set.empty(), ErrorCode::InvalidValue,
            "model " + descriptor.model_id + " has an empty label set");
    require(adapter != nullptr, ErrorCode::InvalidValue, "null adapter");
    std::unique_lock lock(mutex_);
    require(!index_.contains(descriptor.model_id), ErrorCode::DuplicateModelId,
            "model id '" + descriptor.model_id + "' already registered");
    auto entry = std::make_shared<Entry>();
    entry->descriptor = std::move(descriptor);
    entry->adapter = std::move(adapter);
    index_[entry->descriptor.model_id] = entries_.size();
    entries_.push_back(entry);
    return entries_.back()->descriptor.model_id;
  }

  std::vector<ModelDescriptor> list_models(TaskKind task) const {
    std::shared_lock lock(mutex_);
    std::vector<ModelDescriptor> out;
    for (const auto& e : entries_) {
      if (e->descriptor.task == task) out.push_back(e->descriptor);
    }
    return out;
  }

  std::vector<ModelDescriptor> list_all() const {
    std::shared_lock lock(mutex_);
    std::vector<ModelDescriptor> out;
    for (const auto& e : entries_) out.push_back(e->descriptor);
    return out;
  }

  bool contains(const std::string& model_id) const {
    std::shared_lock lock(mutex_);
    return index_.contains(model_id);
  }

  ModelDescriptor descriptor(const std::string& model_id) const {
    return entry(model_id)->descriptor;
  }

  Prediction predict(const std::string& model_id, const ImageTensor& image) const {
    auto e = entry(model_id);
    Prediction p = invoke(*e, [&] { return e->adapter->predict(image); });
    finish_prediction(e->descriptor, image, p);
    return p;
  }

  std::vector<Prediction> predict_batch(const std::string& model_id,
                                        std::span<const ImageTensor> images) const {
    auto e = entry(model_id);
    auto preds = invoke(*e, [&] { return e->adapter->predict_batch(images); });
    require(preds.size() == images.size(), ErrorCode::AdapterFailure,
            "adapter returned a batch of the wrong size");
    for (std::size_t i = 0; i < preds.size(); ++i) {
      finish_prediction(e->descriptor, images[i], preds[i]);
    }
    return preds;
  }

  FeatureBundle activations_and_gradients(const std::string& model_id, const ImageTensor& image,
                                          const TargetSpec& target) const {
    auto e = entry(model_id);
    require(e->descriptor.supports_gradients, ErrorCode::GradientsUnsupported,
            "model " + model_id + " is perturbation-only");
    check_target(e->descriptor, target);
    FeatureBundle bundle =
        invoke(*e, [&] { return e->adapter->activations_and_gradients(image, target); });
    bundle.validate();
    if (bundle.layer_id.empty()) bundle.layer_id = e->descriptor.explanation_layer;
    bundle.target = target;
    return bundle;
  }

  double target_score(const std::string& model_id, const ImageTensor& image,
                      const TargetSpec& target) const {
    auto e = entry(model_id);
    require(e->descriptor.supports_gradients, ErrorCode::GradientsUnsupported,
            "model " + model_id + " is perturbation-only");
    check_target(e->descriptor, target);
    return invoke(*e, [&] { return e->adapter->target_score(image, target); });
  }

  Tensor3 class_probability_map(const std::string& model_id, const ImageTensor& image) const {
    auto e = entry(model_id);
    Tensor3 probs = invoke(*e, [&] { return e->adapter->class_probability_map(image); });
    require(probs.channels == e->descriptor.label_set.size() &&
                probs.height == image.height() && probs.width == image.width(),
            ErrorCode::AdapterFailure, "probability map has the wrong shape");
    return probs;
  }

 private:
  struct Entry {
    ModelDescriptor descriptor;
    std::shared_ptr<ModelAdapter> adapter;
    std::mutex serial;
  };

  std::shared_ptr<Entry> entry(const std::string& model_id) const {
    std::shared_lock lock(mutex_);
    auto it = index_.find(model_id);
    require(it != index_.end(), ErrorCode::UnknownModel, "unknown model '" + model_id + "'");
    return entries_[it->second];
  }

  template <typename Fn>
  static std::invoke_result_t<Fn> invoke(Entry& e, Fn&& fn) {
    std::unique_lock<std::mutex> serial(e.serial, std::defer_lock);
    if (!e.descriptor.concurrent_safe) serial.lock();
    try {
      return fn();
    } catch (const Error&) {
      throw;
    } catch (const std::exception& ex) {
      throw Error(ErrorCode::AdapterFailure,
                  "model " + e.descriptor.model_id + " failed: " + ex.what());
    }
  }

  static void finish_prediction(const ModelDescriptor& desc, const ImageTensor& image,
                                Prediction& p) {
    p.model_id = desc.model_id;
    require(p.task == desc.task, ErrorCode::AdapterFailure,
            "adapter returned a prediction for the wrong task");
    try {
      p.validate();
    } catch (const Error& e) {
      throw Error(ErrorCode::AdapterFailure,
                  "model " + desc.model_id + " returned an invalid prediction: " + e.what());
    }
    if (p.task == TaskKind::Segmentation) {
      require(p.label_map().height == image.height() && p.label_map().width == image.width(),
              ErrorCode::AdapterFailure, "label map does not match the image size");
    }
  }

  mutable std::shared_mutex mutex_;
  std::vector<std::shared_ptr<Entry>> entries_;
  std::map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Plugin manifest: {"models": [{model_id, task, entry_point, config}]}.

struct LoadedModel {
  ModelDescriptor descriptor;
  std::shared_ptr<ModelAdapter> adapter;
};

/// Builds an adapter from its configuration map (weights path, device, ...).
using ModelFactory = std::function<LoadedModel(const std::string& model_id, const json& config)>;
using FactoryTable = std::map<std::string, ModelFactory, std::less<>>;

inline std::vector<std::string> load_model_manifest(const json& manifest,
                                                    ModelRegistry& registry,
                                                    const FactoryTable& factories) {
  require(manifest.contains("models") && manifest["models"].is_array(), ErrorCode::ParseError,
          "model manifest needs a 'models' array");
  std::vector<std::string> ids;
  for (const auto& row : manifest["models"]) {
    const auto id = row.at("model_id").get<std::string>();
    const auto entry_point = row.at("entry_point").get<std::string>();
    auto it = factories.find(entry_point);
    require(it != factories.end(), ErrorCode::UnknownModel,
            "no factory for entry point '" + entry_point + "'");
    LoadedModel loaded = it->second(id, row.value("config", json::object()));
    loaded.descriptor.model_id = id;
    if (row.contains("task")) {
      require(row["task"].get<TaskKind>() == loaded.descriptor.task, ErrorCode::TaskMismatch,
              "manifest task for " + id + " does not match its adapter");
    }
    ids.push_back(registry.register_model(loaded.descriptor, loaded.adapter));
  }
  return ids;
}

}  // namespace langxai
