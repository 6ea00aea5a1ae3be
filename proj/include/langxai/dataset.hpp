#pragma once

// Dataset ingestion: class folders, COCO-style boxes, label-map PNGs.

#include <algorithm>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "langxai/domain.hpp"
#include "langxai/image_io.hpp"
#include "langxai/store.hpp"

namespace langxai {

enum class DatasetFormat { FolderLabels, CocoJson, MaskPngs };

inline std::string_view to_string(DatasetFormat f) {
  switch (f) {
    case DatasetFormat::FolderLabels: return "folder_labels";
    case DatasetFormat::CocoJson: return "coco_json";
    case DatasetFormat::MaskPngs: return "mask_pngs";
  }
  return "?";
}

inline DatasetFormat parse_dataset_format(std::string_view s) {
  for (auto f : {DatasetFormat::FolderLabels, DatasetFormat::CocoJson, DatasetFormat::MaskPngs}) {
    if (s == to_string(f)) return f;
  }
  fail(ErrorCode::InvalidParameter, "unknown dataset format '" + std::string(s) + "'");
}

inline TaskKind task_of(DatasetFormat f) {
  switch (f) {
    case DatasetFormat::FolderLabels: return TaskKind::Classification;
    case DatasetFormat::CocoJson: return TaskKind::Detection;
    case DatasetFormat::MaskPngs: return TaskKind::Segmentation;
  }
  return TaskKind::Classification;
}

struct DatasetItem {
  std::string item_id;
  fs::path image_path;  // relative to the manifest root
  GroundTruth ground_truth;
  std::optional<std::string> reference_text;
};

struct DatasetManifest {
  std::string dataset_id;
  TaskKind task = TaskKind::Classification;
  fs::path root;
  std::vector<std::string> label_set;
  std::vector<DatasetItem> items;

  fs::path image_file(const DatasetItem& item) const { return root / item.image_path; }

  void validate() const {
    for (const auto& item : items) {
      require(fs::exists(image_file(item)), ErrorCode::MissingImage,
              "missing image " + image_file(item).string());
      require(item.ground_truth.task == task, ErrorCode::TaskMismatch,
              "item " + item.item_id + " has ground truth for another task");
      item.ground_truth.validate();
    }
  }
};

inline void to_json(json& j, const DatasetItem& item) {
  j = json{{"item_id", item.item_id},
           {"image_path", item.image_path.generic_string()},
           {"ground_truth", item.ground_truth}};
  j["reference_text"] = item.reference_text ? json(*item.reference_text) : json(nullptr);
}
inline void from_json(const json& j, DatasetItem& item) {
  item.item_id = j.at("item_id").get<std::string>();
  item.image_path = j.at("image_path").get<std::string>();
  item.ground_truth = j.at("ground_truth").get<GroundTruth>();
  if (j.contains("reference_text") && !j["reference_text"].is_null()) {
    item.reference_text = j["reference_text"].get<std::string>();
  }
}
inline void to_json(json& j, const DatasetManifest& m) {
  j = json{{"dataset_id", m.dataset_id}, {"task", m.task},   {"root", m.root.string()},
           {"label_set", m.label_set},   {"items", m.items}};
}
inline void from_json(const json& j, DatasetManifest& m) {
  m.dataset_id = j.at("dataset_id").get<std::string>();
  m.task = j.at("task").get<TaskKind>();
  m.root = j.at("root").get<std::string>();
  m.label_set = j.at("label_set").get<std::vector<std::string>>();
  m.items = j.at("items").get<std::vector<DatasetItem>>();
}

namespace dataset_detail {

inline std::string read_text(const fs::path& p) {
  const Bytes b = read_file(p);
  return std::string(b.begin(), b.end());
}

inline std::optional<std::string> reference_for(const fs::path& image) {
  fs::path txt = image;
  txt.replace_extension(".txt");
  if (!fs::exists(txt)) return std::nullopt;
  std::string s = read_text(txt);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.pop_back();
  return s;
}

inline std::vector<fs::path> sorted_entries(const fs::path& dir, bool directories) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (directories ? e.is_directory() : (e.is_regular_file() && e.path().extension() == ".png")) {
      out.push_back(e.path());
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline std::size_t line_at(std::string_view text, std::size_t offset) {
  offset = std::min(offset, text.size());
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(offset), '\n'));
}

/// Line of each element of the top-level array `key` in a JSON document.
inline std::vector<std::size_t> array_element_lines(std::string_view text, std::string_view key) {
  std::vector<std::size_t> lines;
  int depth = 0;
  bool in_string = false;
  std::size_t string_start = 0;
  std::string last_key;
  int target_depth = -1;
  bool expect_element = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (in_string) {
      if (c == '\\') {
        ++i;
      } else if (c == '"') {
        in_string = false;
        if (depth == 1) last_key = std::string(text.substr(string_start, i - string_start));
      }
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) continue;
    if (expect_element && c != ']') {
      lines.push_back(line_at(text, i));
      expect_element = false;
    }
    switch (c) {
      case '"':
        in_string = true;
        string_start = i + 1;
        break;
      case '{':
        ++depth;
        break;
      case '[':
        ++depth;
        if (depth == 2 && last_key == key) {
          target_depth = depth;
          expect_element = true;
        }
        break;
      case '}':
        --depth;
        break;
      case ']':
        if (depth == target_depth) target_depth = -1;
        --depth;
        expect_element = false;
        break;
      case ',':
        if (depth == target_depth) expect_element = true;
        break;
      default:
        break;
    }
  }
  return lines;
}

[[noreturn]] inline void malformed(const fs::path& file, std::size_t line, const std::string& what) {
  fail(ErrorCode::MalformedAnnotation, file.string() + ":" + std::to_string(line) + ": " + what);
}

inline DatasetManifest folder_labels(const fs::path& root) {
  DatasetManifest m;
  m.task = TaskKind::Classification;
  const auto classes = sorted_entries(root, true);
  require(!classes.empty(), ErrorCode::MalformedAnnotation,
          root.string() + ": no class directories");
  for (std::size_t c = 0; c < classes.size(); ++c) {
    const std::string label = classes[c].filename().string();
    m.label_set.push_back(label);
    for (const auto& img : sorted_entries(classes[c], false)) {
      m.items.push_back({label + "/" + img.stem().string(), fs::relative(img, root),
                         GroundTruth{TaskKind::Classification, ClassLabel{static_cast<int>(c), label}},
                         reference_for(img)});
    }
  }
  return m;
}

inline DatasetManifest coco_json(const fs::path& root) {
  const fs::path file = root / "annotations.json";
  require(fs::exists(file), ErrorCode::MalformedAnnotation, file.string() + ": not found");
  const std::string text = read_text(file);
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    malformed(file, line_at(text, e.byte == 0 ? 0 : e.byte - 1), e.what());
  }
  const auto image_lines = array_element_lines(text, "images");
  const auto ann_lines = array_element_lines(text, "annotations");
  const auto cat_lines = array_element_lines(text, "categories");
  const auto line_of = [](const std::vector<std::size_t>& lines, std::size_t i) {
    return i < lines.size() ? lines[i] : std::size_t{1};
  };
  for (const char* key : {"images", "annotations", "categories"}) {
    if (!doc.contains(key) || !doc[key].is_array()) {
      malformed(file, 1, std::string("missing array '") + key + "'");
    }
  }
  const fs::path image_dir = fs::is_directory(root / "images") ? root / "images" : root;

  DatasetManifest m;
  m.task = TaskKind::Detection;
  std::vector<std::pair<long, std::string>> cats;
  for (std::size_t i = 0; i < doc["categories"].size(); ++i) {
    const auto& c = doc["categories"][i];
    try {
      cats.emplace_back(c.at("id").get<long>(), c.at("name").get<std::string>());
    } catch (const json::exception& e) {
      malformed(file, line_of(cat_lines, i), std::string("category: ") + e.what());
    }
  }
  std::sort(cats.begin(), cats.end());
  std::map<long, std::size_t> class_of;
  for (std::size_t i = 0; i < cats.size(); ++i) {
    if (!class_of.emplace(cats[i].first, i).second) {
      malformed(file, 1, "duplicate category id " + std::to_string(cats[i].first));
    }
    m.label_set.push_back(cats[i].second);
  }

  std::map<long, std::size_t> item_of;
  for (std::size_t i = 0; i < doc["images"].size(); ++i) {
    const auto& im = doc["images"][i];
    long id = 0;
    std::string name;
    try {
      id = im.at("id").get<long>();
      name = im.at("file_name").get<std::string>();
    } catch (const json::exception& e) {
      malformed(file, line_of(image_lines, i), std::string("image: ") + e.what());
    }
    const fs::path path = image_dir / name;
    require(fs::exists(path), ErrorCode::MissingImage,
            file.string() + ":" + std::to_string(line_of(image_lines, i)) + ": image " +
                path.string() + " does not exist");
    if (!item_of.emplace(id, m.items.size()).second) {
      malformed(file, line_of(image_lines, i), "duplicate image id " + std::to_string(id));
    }
    m.items.push_back({fs::path(name).stem().string(), fs::relative(path, root),
                       GroundTruth{TaskKind::Detection, Detections{}}, reference_for(path)});
  }

  for (std::size_t i = 0; i < doc["annotations"].size(); ++i) {
    const auto& a = doc["annotations"][i];
    const std::size_t line = line_of(ann_lines, i);
    long image_id = 0, category = 0;
    std::vector<double> bbox;
    try {
      image_id = a.at("image_id").get<long>();
      category = a.at("category_id").get<long>();
      bbox = a.at("bbox").get<std::vector<double>>();
    } catch (const json::exception& e) {
      malformed(file, line, std::string("annotation: ") + e.what());
    }
    auto item = item_of.find(image_id);
    if (item == item_of.end()) malformed(file, line, "unknown image_id " + std::to_string(image_id));
    auto cls = class_of.find(category);
    if (cls == class_of.end()) malformed(file, line, "unknown category_id " + std::to_string(category));
    if (bbox.size() != 4 || !(bbox[2] > 0) || !(bbox[3] > 0) || !std::isfinite(bbox[0]) ||
        !std::isfinite(bbox[1])) {
      malformed(file, line, "bbox must be [x, y, width, height] with positive size");
    }
    auto& dets = std::get<Detections>(m.items[item->second].ground_truth.payload);
    dets.push_back(make_gt_detection({bbox[0], bbox[1], bbox[0] + bbox[2], bbox[1] + bbox[3]},
                                     cls->second, cats.size()));
  }
  return m;
}

inline DatasetManifest mask_pngs(const fs::path& root) {
  const fs::path images = root / "images";
  const fs::path masks = root / "masks";
  require(fs::is_directory(images) && fs::is_directory(masks), ErrorCode::MalformedAnnotation,
          root.string() + ": expected images/ and masks/ directories");
  DatasetManifest m;
  m.task = TaskKind::Segmentation;
  int max_label = 0;
  const auto image_files = sorted_entries(images, false);
  std::set<std::string> stems;
  for (const auto& img : image_files) stems.insert(img.stem().string());
  for (const auto& mask : sorted_entries(masks, false)) {
    require(stems.contains(mask.stem().string()), ErrorCode::MissingImage,
            mask.string() + ": no image " + (images / mask.filename()).string());
  }
  for (const auto& img : image_files) {
    const fs::path mask_file = masks / img.filename();
    require(fs::exists(mask_file), ErrorCode::MalformedAnnotation,
            mask_file.string() + ":1: label map missing for " + img.filename().string());
    RawPixels raw;
    try {
      raw = decode_png_raw(read_file(mask_file));
    } catch (const Error& e) {
      malformed(mask_file, 1, e.what());
    }
    if (raw.channels != 1) malformed(mask_file, 1, "label map must be single-channel");
    const RawPixels pic = decode_png_raw(read_file(img));
    if (pic.height != raw.height || pic.width != raw.width) {
      malformed(mask_file, 1, "label map size differs from the image");
    }
    LabelMap map{raw.height, raw.width, std::vector<int>(raw.samples.begin(), raw.samples.end())};
    for (int l : map.labels) max_label = std::max(max_label, l);
    m.items.push_back({img.stem().string(), fs::relative(img, root),
                       GroundTruth{TaskKind::Segmentation, std::move(map)}, reference_for(img)});
  }
  const fs::path labels = root / "labels.txt";
  if (fs::exists(labels)) {
    std::istringstream in(read_text(labels));
    for (std::string line; std::getline(in, line);) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty()) m.label_set.push_back(line);
    }
  }
  if (m.label_set.size() <= static_cast<std::size_t>(max_label)) {
    require(m.label_set.empty(), ErrorCode::MalformedAnnotation,
            labels.string() + ": fewer labels than classes used in the masks");
    for (int l = 0; l <= max_label; ++l) m.label_set.push_back("class " + std::to_string(l));
  }
  return m;
}

}  // namespace dataset_detail

/// Walks `root` in the given layout. Image paths in the result are relative
/// to `root`; `<stem>.txt` beside an image becomes its reference text.
///   folder_labels: <root>/<class>/<image>.png
///   coco_json:     <root>/annotations.json, images in <root>/images or <root>
///   mask_pngs:     <root>/images/<stem>.png with <root>/masks/<stem>.png,
///                  optional <root>/labels.txt (one class name per line)
inline DatasetManifest ingest_dataset(const fs::path& root, DatasetFormat format,
                                      std::string dataset_id = {}) {
  require(fs::is_directory(root), ErrorCode::NotFound, "dataset root " + root.string() + " not found");
  DatasetManifest m;
  switch (format) {
    case DatasetFormat::FolderLabels: m = dataset_detail::folder_labels(root); break;
    case DatasetFormat::CocoJson: m = dataset_detail::coco_json(root); break;
    case DatasetFormat::MaskPngs: m = dataset_detail::mask_pngs(root); break;
  }
  m.root = fs::absolute(root).lexically_normal();
  if (m.root.filename().empty()) m.root = m.root.parent_path();
  m.dataset_id = dataset_id.empty() ? m.root.filename().string() : std::move(dataset_id);
  if (m.dataset_id.empty()) m.dataset_id = "dataset";
  m.validate();
  return m;
}

inline void persist_dataset(RunStore& store, const DatasetManifest& m) {
  store.save_dataset(m.dataset_id, json(m));
}

inline DatasetManifest load_dataset(const RunStore& store, const std::string& dataset_id) {
  DatasetManifest m = store.load_dataset(dataset_id).get<DatasetManifest>();
  m.validate();
  return m;
}

}  // namespace langxai
