#pragma once

// Perturbation attribution: RISE for classification/segmentation targets
// and D-RISE for detection targets, plus random/exhaustive mask sets.

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <random>
#include <thread>
#include <vector>

#include "langxai/codec.hpp"
#include "langxai/image_io.hpp"
#include "langxai/model_zoo.hpp"
#include "langxai/saliency_gradient.hpp"

namespace langxai {

struct MaskSet {
  std::size_t count = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  ImageSize grid;
  double keep_prob = 0.5;
  std::uint64_t seed = 0;
  bool enumerated = false;
  std::vector<double> values;  // count x height x width

  std::span<const double> mask(std::size_t i) const {
    return std::span<const double>(values).subspan(i * height * width, height * width);
  }
  friend bool operator==(const MaskSet&, const MaskSet&) = default;
};

struct MaskParams {
  std::size_t count = 4000;
  ImageSize grid{7, 7};
  double keep_prob = 0.5;
  std::uint64_t seed = 0;
};

namespace mask_detail {

// Portable draws from mt19937_64 so mask sets are identical across standard
// library implementations.
inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline std::size_t uniform_below(std::mt19937_64& rng, std::size_t bound) {
  return static_cast<std::size_t>(uniform01(rng) * static_cast<double>(bound));
}

inline std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

}  // namespace mask_detail

/// Random RISE masks: Bernoulli(p) grids bilinearly upsampled to
/// (H + ceil(H/h), W + ceil(W/w)) and cropped to (H, W) at a random shift.
inline MaskSet generate_masks(std::size_t n, ImageSize grid, double keep_prob, ImageSize out,
                              std::uint64_t seed) {
  require(n >= 1, ErrorCode::InvalidParameter, "mask count must be >= 1");
  require(keep_prob > 0.0 && keep_prob < 1.0, ErrorCode::InvalidParameter,
          "keep probability must lie in (0,1)");
  require(grid.height >= 1 && grid.width >= 1, ErrorCode::InvalidParameter,
          "grid must be at least 1x1");
  require(grid.height <= out.height && grid.width <= out.width, ErrorCode::InvalidParameter,
          "grid larger than output size");

  const std::size_t cell_h = mask_detail::ceil_div(out.height, grid.height);
  const std::size_t cell_w = mask_detail::ceil_div(out.width, grid.width);
  const ImageSize up{out.height + cell_h, out.width + cell_w};

  MaskSet set{n, out.height, out.width, grid, keep_prob, seed, false, {}};
  set.values.resize(n * out.height * out.width);
  std::mt19937_64 rng(seed);
  Map2D cells(grid.height, grid.width, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (double& c : cells.values) c = mask_detail::uniform01(rng) < keep_prob ? 1.0 : 0.0;
    const Map2D smooth = upsample_map(cells, up);
    const std::size_t oy = mask_detail::uniform_below(rng, cell_h);
    const std::size_t ox = mask_detail::uniform_below(rng, cell_w);
    double* dst = set.values.data() + i * out.height * out.width;
    for (std::size_t y = 0; y < out.height; ++y) {
      for (std::size_t x = 0; x < out.width; ++x) {
        dst[y * out.width + x] = std::clamp(smooth.at(y + oy, x + ox), 0.0, 1.0);
      }
    }
  }
  return set;
}

/// All 2^(h*w) binary masks at grid resolution, in binary counting order
/// with cell 0 as the most significant bit. Each cell is on in exactly half
/// of them, so the set behaves as keep_prob = 0.5.
inline MaskSet enumerate_masks(ImageSize grid) {
  const std::size_t cells = grid.height * grid.width;
  require(cells >= 1, ErrorCode::InvalidParameter, "grid must be at least 1x1");
  require(cells <= 16, ErrorCode::TooLarge, "exhaustive enumeration limited to 16 cells");
  const std::size_t n = std::size_t{1} << cells;
  MaskSet set{n, grid.height, grid.width, grid, 0.5, 0, true, std::vector<double>(n * cells)};
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t c = 0; c < cells; ++c) {
      set.values[b * cells + c] = ((b >> (cells - 1 - c)) & 1U) ? 1.0 : 0.0;
    }
  }
  return set;
}

/// I * M per pixel, the mask broadcast over channels.
inline ImageTensor apply_mask(const ImageTensor& image, std::span<const double> mask) {
  require(mask.size() == image.height() * image.width(), ErrorCode::ShapeMismatch,
          "mask does not match image size");
  std::vector<double> data(image.data().begin(), image.data().end());
  const std::size_t ch = image.channels();
  for (std::size_t p = 0; p < mask.size(); ++p) {
    for (std::size_t c = 0; c < ch; ++c) data[p * ch + c] *= mask[p];
  }
  return ImageTensor(image.height(), image.width(), ch, std::move(data));
}

struct PerturbationOptions {
  std::size_t batch_size = 32;
  std::size_t parallelism = 1;
};

namespace perturb_detail {

/// Scores every masked image in batches across a bounded worker pool. The
/// result is indexed by mask, so accumulation order never depends on
/// scheduling.
template <typename BatchScorer>
std::vector<double> score_masks(const ImageTensor& image, const MaskSet& masks,
                                const PerturbationOptions& opts, BatchScorer&& score_batch) {
  const std::size_t batch = std::max<std::size_t>(1, opts.batch_size);
  const std::size_t batches = (masks.count + batch - 1) / batch;
  std::vector<double> scores(masks.count, 0.0);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;

  const auto worker = [&] {
    std::vector<ImageTensor> masked;
    for (std::size_t b = next++; b < batches; b = next++) {
      const std::size_t begin = b * batch;
      const std::size_t end = std::min(masks.count, begin + batch);
      try {
        masked.clear();
        for (std::size_t i = begin; i < end; ++i) masked.push_back(apply_mask(image, masks.mask(i)));
        const std::vector<double> s = score_batch(std::span<const ImageTensor>(masked));
        std::copy(s.begin(), s.end(), scores.begin() + static_cast<std::ptrdiff_t>(begin));
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = batches;
      }
    }
  };

  const std::size_t threads = std::clamp<std::size_t>(opts.parallelism, 1, batches);
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);
  return scores;
}

inline Map2D accumulate(const MaskSet& masks, std::span<const double> weights, double scale) {
  Map2D acc(masks.height, masks.width, 0.0);
  for (std::size_t i = 0; i < masks.count; ++i) {
    if (weights[i] == 0.0) continue;
    const auto m = masks.mask(i);
    for (std::size_t p = 0; p < m.size(); ++p) acc.values[p] += weights[i] * m[p];
  }
  for (double& v : acc.values) v *= scale;
  return acc;
}

}  // namespace perturb_detail

/// RISE importance before normalization:
/// S = 1/(N p) * sum_i f(I * M_i) M_i.
inline Map2D rise_raw(const ModelRegistry& registry, const std::string& model_id,
                      const ImageTensor& image, const TargetSpec& target, const MaskSet& masks,
                      const PerturbationOptions& opts = {}) {
  const ModelDescriptor desc = registry.descriptor(model_id);
  require(desc.task != TaskKind::Detection, ErrorCode::TargetInvalid,
          "RISE explains class targets; use D-RISE for detection models");
  check_target(desc, target);
  require(masks.height == image.height() && masks.width == image.width(), ErrorCode::ShapeMismatch,
          "mask set size does not match the image");
  require(masks.count >= 1, ErrorCode::InvalidParameter, "empty mask set");
  const auto cls = static_cast<std::size_t>(std::get<ClassTarget>(target).class_id);

  std::vector<double> scores;
  if (desc.task == TaskKind::Classification) {
    scores = perturb_detail::score_masks(image, masks, opts, [&](std::span<const ImageTensor> b) {
      const auto preds = registry.predict_batch(model_id, b);
      std::vector<double> s(preds.size());
      for (std::size_t i = 0; i < preds.size(); ++i) s[i] = preds[i].class_probs()[cls];
      return s;
    });
  } else {
    // Fixed evaluation region: pixels assigned to the target class on the
    // unmasked image (all pixels if the class is absent).
    const LabelMap labels = registry.predict(model_id, image).label_map();
    std::vector<std::size_t> region;
    for (std::size_t i = 0; i < labels.labels.size(); ++i) {
      if (labels.labels[i] == static_cast<int>(cls)) region.push_back(i);
    }
    if (region.empty()) {
      region.resize(labels.labels.size());
      std::iota(region.begin(), region.end(), std::size_t{0});
    }
    scores = perturb_detail::score_masks(image, masks, opts, [&](std::span<const ImageTensor> b) {
      std::vector<double> s(b.size());
      for (std::size_t i = 0; i < b.size(); ++i) {
        const Tensor3 probs = registry.class_probability_map(model_id, b[i]);
        const auto plane = probs.channel(cls);
        double sum = 0.0;
        for (std::size_t idx : region) sum += plane[idx];
        s[i] = sum / static_cast<double>(region.size());
      }
      return s;
    });
  }
  const double scale = 1.0 / (static_cast<double>(masks.count) * masks.keep_prob);
  return perturb_detail::accumulate(masks, scores, scale);
}

inline SaliencyMap rise(const ModelRegistry& registry, const std::string& model_id,
                        const ImageTensor& image, const TargetSpec& target, const MaskSet& masks,
                        const PerturbationOptions& opts = {}) {
  const Map2D norm = normalize_map(rise_raw(registry, model_id, image, target, masks, opts));
  return SaliencyMap{image.height(), image.width(), norm.values, "rise", target,
                     Mechanism::Perturbation};
}

/// iou(box) * cosine(class_probs) * proposal objectness; cosine with a zero
/// vector is 0.
inline double detection_similarity(const Detection& target, const Detection& proposal) {
  require(target.class_probs.size() == proposal.class_probs.size(), ErrorCode::LengthMismatch,
          "class probability vectors differ in length");
  double dot = 0.0, nt = 0.0, np = 0.0;
  for (std::size_t i = 0; i < target.class_probs.size(); ++i) {
    dot += target.class_probs[i] * proposal.class_probs[i];
    nt += target.class_probs[i] * target.class_probs[i];
    np += proposal.class_probs[i] * proposal.class_probs[i];
  }
  const double cosine = (nt > 0.0 && np > 0.0) ? dot / (std::sqrt(nt) * std::sqrt(np)) : 0.0;
  const double s = iou(target.box, proposal.box) * cosine * proposal.objectness;
  return std::clamp(s, 0.0, 1.0);
}

/// D-RISE importance before normalization: sum_i w_i M_i where w_i is the
/// best similarity between the target and any detection on I * M_i.
inline Map2D d_rise_raw(const ModelRegistry& registry, const std::string& model_id,
                        const ImageTensor& image, const TargetSpec& target, const MaskSet& masks,
                        const PerturbationOptions& opts = {}) {
  const ModelDescriptor desc = registry.descriptor(model_id);
  require(desc.task == TaskKind::Detection, ErrorCode::TargetInvalid,
          "D-RISE requires a detection model");
  require(std::holds_alternative<DetectionTarget>(target), ErrorCode::TargetInvalid,
          "D-RISE requires a detection target");
  check_target(desc, target);
  require(masks.height == image.height() && masks.width == image.width(), ErrorCode::ShapeMismatch,
          "mask set size does not match the image");
  const Detection& wanted = std::get<DetectionTarget>(target).detection;

  const auto weights =
      perturb_detail::score_masks(image, masks, opts, [&](std::span<const ImageTensor> b) {
        const auto preds = registry.predict_batch(model_id, b);
        std::vector<double> w(preds.size(), 0.0);
        for (std::size_t i = 0; i < preds.size(); ++i) {
          for (const auto& d : preds[i].detections()) {
            w[i] = std::max(w[i], detection_similarity(wanted, d));
          }
        }
        return w;
      });
  return perturb_detail::accumulate(masks, weights, 1.0);
}

inline SaliencyMap d_rise(const ModelRegistry& registry, const std::string& model_id,
                          const ImageTensor& image, const TargetSpec& target, const MaskSet& masks,
                          const PerturbationOptions& opts = {}) {
  const Map2D norm = normalize_map(d_rise_raw(registry, model_id, image, target, masks, opts));
  return SaliencyMap{image.height(), image.width(), norm.values, "drise", target,
                     Mechanism::Perturbation};
}

// ---------------------------------------------------------------------------
// Persistence: zlib-compressed little-endian float64 array + JSON sidecar.

inline void save_masks(const MaskSet& set, const std::filesystem::path& path) {
  static_assert(std::endian::native == std::endian::little, "mask files are little-endian");
  Bytes raw(set.values.size() * sizeof(double));
  std::memcpy(raw.data(), set.values.data(), raw.size());
  write_file(path, zlib_compress(raw));
  const json sidecar{{"count", set.count},
                     {"height", set.height},
                     {"width", set.width},
                     {"grid", {set.grid.height, set.grid.width}},
                     {"keep_prob", set.keep_prob},
                     {"seed", set.seed},
                     {"enumerated", set.enumerated},
                     {"dtype", "f64le"},
                     {"raw_bytes", raw.size()},
                     {"sha256", sha256_hex(raw)}};
  const std::string text = sidecar.dump(2) + "\n";
  write_file(path.string() + ".json", as_bytes(text));
}

inline MaskSet load_masks(const std::filesystem::path& path) {
  const Bytes meta_bytes = read_file(path.string() + ".json");
  const json meta = json::parse(meta_bytes.begin(), meta_bytes.end());
  MaskSet set;
  set.count = meta.at("count").get<std::size_t>();
  set.height = meta.at("height").get<std::size_t>();
  set.width = meta.at("width").get<std::size_t>();
  set.grid = {meta.at("grid").at(0).get<std::size_t>(), meta.at("grid").at(1).get<std::size_t>()};
  set.keep_prob = meta.at("keep_prob").get<double>();
  set.seed = meta.at("seed").get<std::uint64_t>();
  set.enumerated = meta.value("enumerated", false);
  require(meta.value("dtype", std::string{}) == "f64le", ErrorCode::ParseError,
          "unsupported mask dtype");
  const auto raw_size = meta.at("raw_bytes").get<std::size_t>();
  require(raw_size == set.count * set.height * set.width * sizeof(double),
          ErrorCode::IntegrityError, "mask sidecar sizes are inconsistent");
  const Bytes raw = zlib_uncompress(read_file(path), raw_size);
  require(sha256_hex(raw) == meta.at("sha256").get<std::string>(), ErrorCode::IntegrityError,
          "mask payload hash mismatch");
  set.values.resize(raw_size / sizeof(double));
  std::memcpy(set.values.data(), raw.data(), raw_size);
  return set;
}

}  // namespace langxai
