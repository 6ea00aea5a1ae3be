#pragma once

// Batch benchmark manifests and the argument forms shared by the CLI.

#include <filesystem>
#include <string>
#include <vector>

#include "langxai/config.hpp"
#include "langxai/explain.hpp"
#include "langxai/toy_models.hpp"

namespace langxai {

/// The built-in toy models, or the models named by a plugin manifest.
inline void register_configured_models(ModelRegistry& registry,
                                       const std::filesystem::path& manifest) {
  if (manifest.empty()) {
    toy::register_toy_models(registry);
    return;
  }
  const Bytes bytes = read_file(manifest);
  json j;
  try {
    j = json::parse(bytes.begin(), bytes.end());
  } catch (const json::parse_error& e) {
    fail(ErrorCode::ParseError, manifest.string() + ": " + e.what());
  }
  load_model_manifest(j, registry, toy::builtin_factories());
}

/// {"lvm": {...}, "runs": [{dataset, format, model, method, masks?}]};
/// dataset paths are relative to the manifest.
struct BenchManifest {
  LvmConfig lvm;
  std::vector<BenchRun> runs;
};

inline BenchManifest load_bench_manifest(const std::filesystem::path& path) {
  const Bytes bytes = read_file(path);
  json j;
  try {
    j = json::parse(bytes.begin(), bytes.end());
  } catch (const json::parse_error& e) {
    fail(ErrorCode::ParseError, path.string() + ": " + e.what());
  }
  require(j.contains("runs") && j["runs"].is_array() && !j["runs"].empty(), ErrorCode::ParseError,
          path.string() + ": needs a non-empty 'runs' array");
  BenchManifest m;
  if (j.contains("lvm")) m.lvm = j["lvm"].get<LvmConfig>();
  const fs::path base = path.parent_path();
  for (const auto& row : j["runs"]) {
    fs::path root = row.at("dataset").get<std::string>();
    if (root.is_relative()) root = base / root;
    BenchRun run{ingest_dataset(root, parse_dataset_format(row.at("format").get<std::string>())),
                 row.at("model").get<std::string>(), row.at("method").get<std::string>(),
                 std::nullopt};
    if (row.contains("masks")) run.masks = mask_params_from_json(row["masks"], MaskParams{});
    m.runs.push_back(std::move(run));
  }
  return m;
}

inline std::vector<MetricReport> run_bench(const std::vector<BenchRun>& runs, const LvmConfig& lvm,
                                           Workbench& wb, const TokenEmbedder& embedder) {
  std::vector<MetricReport> reports;
  for (const auto& run : runs) reports.push_back(bench_dataset(run, lvm, wb, embedder));
  return reports;
}

/// Table, blank line, then the same numbers as CSV. No timestamps or ids.
inline std::string bench_report_text(const std::vector<MetricReport>& reports) {
  return report_table(reports) + "\n" + report_csv(reports);
}

namespace bench_detail {
inline std::optional<long> as_integer(const std::string& text) {
  std::size_t used = 0;
  try {
    const long v = std::stol(text, &used);
    if (used == text.size()) return v;
  } catch (const std::exception&) {
  }
  return std::nullopt;
}
}  // namespace bench_detail

/// An integer (class id, or detection index for detection models) or a JSON
/// target object.
inline TargetSpec parse_target_arg(const std::string& text, TaskKind task) {
  if (auto v = bench_detail::as_integer(text)) {
    require(*v >= 0, ErrorCode::TargetInvalid, "target must be non-negative");
    if (task == TaskKind::Detection) return DetectionTarget{static_cast<std::size_t>(*v), {}};
    return ClassTarget{static_cast<int>(*v)};
  }
  try {
    return json::parse(text).get<TargetSpec>();
  } catch (const json::exception& e) {
    fail(ErrorCode::InvalidParameter, "cannot read target '" + text + "': " + e.what());
  }
}

/// Ground truth as a class id or label name (classification), a
/// single-channel mask PNG (segmentation), a JSON file or inline JSON.
inline GroundTruth parse_ground_truth_arg(const std::string& text, TaskKind task,
                                          const std::vector<std::string>& labels) {
  const fs::path path = text;
  if (task == TaskKind::Classification) {
    if (auto v = bench_detail::as_integer(text)) {
      return GroundTruth{task, ClassLabel{static_cast<int>(*v), ""}};
    }
    const auto it = std::find(labels.begin(), labels.end(), text);
    if (it != labels.end()) {
      return GroundTruth{task, ClassLabel{static_cast<int>(it - labels.begin()), text}};
    }
  }
  if (path.extension() == ".png" && fs::exists(path)) {
    require(task == TaskKind::Segmentation, ErrorCode::TaskMismatch,
            "mask ground truth is for segmentation");
    const RawPixels raw = decode_png_raw(read_file(path));
    require(raw.channels == 1, ErrorCode::InvalidParameter, "label map must be single-channel");
    return GroundTruth{task, LabelMap{raw.height, raw.width,
                                      std::vector<int>(raw.samples.begin(), raw.samples.end())}};
  }
  json j;
  try {
    if (path.extension() == ".json" && fs::exists(path)) {
      const Bytes bytes = read_file(path);
      j = json::parse(bytes.begin(), bytes.end());
    } else {
      j = json::parse(text);
    }
    if (j.is_object() && !j.contains("task")) j["task"] = task;
    return j.get<GroundTruth>();
  } catch (const json::exception& e) {
    fail(ErrorCode::InvalidParameter, "cannot read ground truth '" + text + "': " + e.what());
  }
}

}  // namespace langxai
