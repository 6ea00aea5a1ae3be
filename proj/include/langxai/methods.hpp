#pragma once

// Attribution method registry, partitioned by mechanism and by the tasks a
// method applies to. New methods plug in through register_method.

#include <functional>
#include <map>
#include <memory>
#include <shared_mutex>
#include <string>
#include <vector>

#include "langxai/saliency_gradient.hpp"
#include "langxai/saliency_perturbation.hpp"

namespace langxai {

struct MethodDescriptor {
  std::string method_id;
  Mechanism mechanism = Mechanism::Gradient;
  std::vector<TaskKind> tasks;
  std::string display_name;

  bool applies_to(TaskKind task) const {
    return std::find(tasks.begin(), tasks.end(), task) != tasks.end();
  }
};

inline void to_json(json& j, const MethodDescriptor& m) {
  j = json{{"method_id", m.method_id},
           {"mechanism", m.mechanism},
           {"tasks", m.tasks},
           {"display_name", m.display_name}};
}

struct SaliencyOptions {
  MaskParams masks;
  std::shared_ptr<const MaskSet> precomputed_masks;  // overrides `masks` when set
  PerturbationOptions perturbation;
};

using SaliencyFn = std::function<SaliencyMap(const ModelRegistry&, const std::string& model_id,
                                             const ImageTensor&, const TargetSpec&,
                                             const SaliencyOptions&)>;

class MethodRegistry {
 public:
  void register_method(MethodDescriptor descriptor, SaliencyFn fn) {
    std::unique_lock lock(mutex_);
    require(!methods_.contains(descriptor.method_id), ErrorCode::DuplicateMethod,
            "method '" + descriptor.method_id + "' already registered");
    const std::string id = descriptor.method_id;
    order_.push_back(id);
    methods_[id] = {std::move(descriptor), std::move(fn)};
  }

  std::vector<MethodDescriptor> list_methods(std::optional<TaskKind> task = std::nullopt) const {
    std::shared_lock lock(mutex_);
    std::vector<MethodDescriptor> out;
    for (const auto& id : order_) {
      const auto& d = methods_.at(id).descriptor;
      if (!task || d.applies_to(*task)) out.push_back(d);
    }
    return out;
  }

  MethodDescriptor descriptor(const std::string& method_id) const {
    std::shared_lock lock(mutex_);
    auto it = methods_.find(method_id);
    require(it != methods_.end(), ErrorCode::UnknownMethod,
            "unknown method '" + method_id + "'");
    return it->second.descriptor;
  }

  SaliencyMap compute(const std::string& method_id, const ModelRegistry& models,
                      const std::string& model_id, const ImageTensor& image,
                      const TargetSpec& target, const SaliencyOptions& opts = {}) const {
    SaliencyFn fn;
    MethodDescriptor desc;
    {
      std::shared_lock lock(mutex_);
      auto it = methods_.find(method_id);
      require(it != methods_.end(), ErrorCode::UnknownMethod,
              "unknown method '" + method_id + "'");
      fn = it->second.fn;
      desc = it->second.descriptor;
    }
    const ModelDescriptor model = models.descriptor(model_id);
    require(desc.applies_to(model.task), ErrorCode::MethodNotApplicable,
            "method " + method_id + " does not apply to " + std::string(to_string(model.task)));
    SaliencyMap map = fn(models, model_id, image, target, opts);
    require(map.height == image.height() && map.width == image.width(), ErrorCode::ShapeMismatch,
            "method " + method_id + " produced a map of the wrong size");
    map.validate();
    map.method_id = method_id;
    map.mechanism = desc.mechanism;
    return map;
  }

 private:
  struct Entry {
    MethodDescriptor descriptor;
    SaliencyFn fn;
  };
  mutable std::shared_mutex mutex_;
  std::vector<std::string> order_;
  std::map<std::string, Entry> methods_;
};

inline MaskSet masks_for(const ImageTensor& image, const SaliencyOptions& opts) {
  if (opts.precomputed_masks) return *opts.precomputed_masks;
  return generate_masks(opts.masks.count, opts.masks.grid, opts.masks.keep_prob, image.size(),
                        opts.masks.seed);
}

/// gradcam, gradcam++, hirescam, rise and drise.
inline void register_default_methods(MethodRegistry& r) {
  const std::vector<TaskKind> dense{TaskKind::Classification, TaskKind::Segmentation};

  using CamFn = SaliencyMap (*)(const FeatureBundle&, ImageSize);
  const auto cam = [](CamFn method) {
    return [method](const ModelRegistry& models, const std::string& model_id,
                    const ImageTensor& image, const TargetSpec& target, const SaliencyOptions&) {
      return method(models.activations_and_gradients(model_id, image, target), image.size());
    };
  };
  r.register_method({"gradcam", Mechanism::Gradient, dense, "GradCAM"}, cam(&grad_cam));
  r.register_method({"gradcam++", Mechanism::Gradient, dense, "GradCAM++"}, cam(&grad_cam_pp));
  r.register_method({"hirescam", Mechanism::Gradient, dense, "HiResCAM"}, cam(&hires_cam));

  r.register_method({"rise", Mechanism::Perturbation, dense, "RISE"},
                    [](const ModelRegistry& models, const std::string& model_id,
                       const ImageTensor& image, const TargetSpec& target,
                       const SaliencyOptions& opts) {
                      return rise(models, model_id, image, target, masks_for(image, opts),
                                  opts.perturbation);
                    });
  r.register_method({"drise", Mechanism::Perturbation, {TaskKind::Detection}, "D-RISE"},
                    [](const ModelRegistry& models, const std::string& model_id,
                       const ImageTensor& image, const TargetSpec& target,
                       const SaliencyOptions& opts) {
                      return d_rise(models, model_id, image, target, masks_for(image, opts),
                                    opts.perturbation);
                    });
}

}  // namespace langxai
