#pragma once

// The end-to-end explanation run and the batch benchmark built on it.

#include <optional>
#include <string>

#include "langxai/dataset.hpp"
#include "langxai/lvm_gateway.hpp"
#include "langxai/methods.hpp"
#include "langxai/prompt_pipeline.hpp"
#include "langxai/store.hpp"
#include "langxai/textmetrics.hpp"

namespace langxai {

/// Everything a run needs. The registries and gateway are shared; the store
/// serializes its own writes.
struct Workbench {
  ModelRegistry& models;
  MethodRegistry& methods;
  LvmGateway& gateway;
  RunStore& store;
  const PromptTemplate& prompt_template = default_template();
};

struct ExplanationRequest {
  std::string image_ref;
  TaskKind task = TaskKind::Classification;
  std::string model_id;
  std::string method_id;
  std::optional<TargetSpec> target;  // default: default_target(prediction)
  std::optional<GroundTruth> ground_truth;
  LvmConfig lvm;
  SaliencyOptions saliency;
  double alpha = 0.5;
};

struct ExplanationRecord {
  std::int64_t record_id = 0;
  TaskKind task = TaskKind::Classification;
  std::string image_ref;
  std::string model_id;
  std::string method_id;
  TargetSpec target;
  std::optional<GroundTruth> ground_truth;
  std::string saliency_ref;
  std::string overlay_ref;
  Prediction prediction;
  std::string explanation_text;
  Verdict verdict = Verdict::Mismatch;
  std::string created_at;
  std::string lvm_provider;
  std::string template_id;
  PromptBundle prompt;
  LvmResult lvm;
};

inline json record_payload(const ExplanationRecord& r) {
  return json{{"task", r.task},
              {"request",
               {{"image_ref", r.image_ref},
                {"model_id", r.model_id},
                {"method_id", r.method_id},
                {"target", r.target},
                {"ground_truth", r.ground_truth ? json(*r.ground_truth) : json(nullptr)}}},
              {"saliency_ref", r.saliency_ref},
              {"overlay_ref", r.overlay_ref},
              {"prediction", r.prediction},
              {"explanation_text", r.explanation_text},
              {"verdict", r.verdict},
              {"lvm_provider", r.lvm_provider},
              {"template_id", r.template_id},
              {"prompt", r.prompt},
              {"lvm", r.lvm}};
}

/// Top-1 class, dominant segment, or the detection with the highest
/// objectness (lowest index on ties).
inline TargetSpec default_target(const Prediction& p) {
  switch (p.task) {
    case TaskKind::Classification:
      return ClassTarget{static_cast<int>(argmax(p.class_probs()))};
    case TaskKind::Segmentation:
      return ClassTarget{static_cast<int>(dominant_segment(p.label_map()))};
    case TaskKind::Detection: {
      const auto& dets = p.detections();
      require(!dets.empty(), ErrorCode::EmptyPrediction, "the model detected nothing to explain");
      std::size_t best = 0;
      for (std::size_t i = 1; i < dets.size(); ++i) {
        if (dets[i].objectness > dets[best].objectness) best = i;
      }
      return DetectionTarget{best, dets[best]};
    }
  }
  return ClassTarget{0};
}

/// Detection targets given by index take their snapshot from `p`.
inline TargetSpec resolve_target(const std::optional<TargetSpec>& requested, const Prediction& p) {
  if (!requested) return default_target(p);
  if (const auto* d = std::get_if<DetectionTarget>(&*requested)) {
    require(p.task == TaskKind::Detection, ErrorCode::TargetInvalid,
            "detection target given for a " + std::string(to_string(p.task)) + " model");
    require(d->detection_index < p.detections().size(), ErrorCode::TargetInvalid,
            "detection index " + std::to_string(d->detection_index) + " out of range");
    return DetectionTarget{d->detection_index, p.detections()[d->detection_index]};
  }
  return *requested;
}

inline ImageTensor load_image_blob(const BlobStore& blobs, const std::string& ref) {
  require(is_blob_id(ref) && blobs.contains(ref), ErrorCode::UnresolvableRef,
          "image reference '" + ref + "' does not resolve");
  return decode_png(blobs.get(ref));
}

/// predict -> saliency -> overlay -> prompt -> LVM -> ledger. Failures carry
/// the stage name; nothing reaches the ledger unless every stage succeeded.
inline ExplanationRecord run_explanation(const ExplanationRequest& req, Workbench& wb) {
  ExplanationRecord r;
  r.task = req.task;
  r.image_ref = req.image_ref;
  r.model_id = req.model_id;
  r.method_id = req.method_id;
  r.ground_truth = req.ground_truth;

  const ImageTensor image = with_stage("input", [&] {
    if (req.ground_truth) {
      require(req.ground_truth->task == req.task, ErrorCode::TaskMismatch,
              "ground truth is for " + std::string(to_string(req.ground_truth->task)));
      req.ground_truth->validate();
    }
    const ModelDescriptor d = wb.models.descriptor(req.model_id);
    require(d.task == req.task, ErrorCode::TaskMismatch,
            "model " + req.model_id + " serves " + std::string(to_string(d.task)));
    wb.methods.descriptor(req.method_id);
    return load_image_blob(wb.store, req.image_ref);
  });
  const ModelDescriptor model = wb.models.descriptor(req.model_id);

  r.prediction = with_stage("predict", [&] { return wb.models.predict(req.model_id, image); });
  r.target = with_stage("predict", [&] { return resolve_target(req.target, r.prediction); });

  const SaliencyMap saliency = with_stage("saliency", [&] {
    return wb.methods.compute(req.method_id, wb.models, req.model_id, image, r.target,
                              req.saliency);
  });
  with_stage("overlay", [&] {
    r.saliency_ref = wb.store.put(as_bytes(json(saliency).dump()));
    r.overlay_ref = wb.store.put(encode_png(render_overlay(image, saliency, req.alpha)));
  });

  r.prompt = with_stage("prompt", [&] {
    return build_prompt({req.task, req.image_ref, r.overlay_ref, r.prediction, r.target,
                         req.ground_truth, model.label_set},
                        wb.store, wb.prompt_template);
  });
  r.template_id = r.prompt.template_id;
  r.verdict = parse_verdict(r.prompt.facts.at("verdict_hint"));

  r.lvm = with_stage("lvm", [&] { return wb.gateway.complete(r.prompt, req.lvm, wb.store); });
  r.explanation_text = r.lvm.text;
  r.lvm_provider = r.lvm.provider;

  with_stage("persist", [&] {
    const json entry = wb.store.append(RecordKind::Explanation, record_payload(r));
    r.record_id = entry.at("record_id").get<std::int64_t>();
    r.created_at = entry.at("created_at").get<std::string>();
  });
  return r;
}

// ---------------------------------------------------------------------------
// Batch benchmark

struct BenchRun {
  DatasetManifest dataset;
  std::string model_id;
  std::string method_id;
  std::optional<MaskParams> masks;  // perturbation methods
};

/// One explanation per dataset item, scored against the item's reference
/// text. Items without a reference are skipped.
inline MetricReport bench_dataset(const BenchRun& run, const LvmConfig& lvm, Workbench& wb,
                                  const TokenEmbedder& embedder) {
  std::vector<MetricRow> rows;
  for (const auto& item : run.dataset.items) {
    if (!item.reference_text) continue;
    const Bytes png = encode_png(load_png(run.dataset.image_file(item)));
    ExplanationRequest req;
    req.image_ref = wb.store.put(png);
    req.task = run.dataset.task;
    req.model_id = run.model_id;
    req.method_id = run.method_id;
    req.ground_truth = item.ground_truth;
    req.lvm = lvm;
    if (run.masks) req.saliency.masks = *run.masks;
    const ExplanationRecord rec = run_explanation(req, wb);
    rows.push_back(score_pair(item.item_id, rec.explanation_text, *item.reference_text, embedder));
  }
  require(!rows.empty(), ErrorCode::EmptyInput,
          "dataset " + run.dataset.dataset_id + " has no items with reference texts");
  return aggregate(std::move(rows), run.dataset.task);
}

}  // namespace langxai
