#pragma once

// CAM-family attribution over a FeatureBundle: GradCAM, GradCAM++, HiResCAM.
// All three share the same tail: ReLU, bilinear upsample to the image size,
// min-max normalize.

#include <algorithm>
#include <cmath>
#include <string>

#include "langxai/model_zoo.hpp"

namespace langxai {

/// Min-max rescale to [0,1]. A constant map becomes all zeros.
inline Map2D normalize_map(const Map2D& raw) {
  for (double v : raw.values) {
    require(std::isfinite(v), ErrorCode::NonFiniteInput, "cannot normalize a non-finite map");
  }
  Map2D out(raw.height, raw.width, 0.0);
  if (raw.values.empty()) return out;
  const auto [lo_it, hi_it] = std::minmax_element(raw.values.begin(), raw.values.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  if (hi == lo) return out;
  const double span = hi - lo;
  for (std::size_t i = 0; i < raw.values.size(); ++i) {
    out.values[i] = std::clamp((raw.values[i] - lo) / span, 0.0, 1.0);
  }
  return out;
}

/// Bilinear resize with pixel-centre sampling (corners not aligned); source
/// coordinates are clamped at the borders.
inline Map2D upsample_map(const Map2D& map, ImageSize out) {
  require(map.height > 0 && map.width > 0 && out.height > 0 && out.width > 0,
          ErrorCode::ShapeMismatch, "cannot resample an empty map");
  require(map.height <= out.height && map.width <= out.width, ErrorCode::ShapeMismatch,
          "upsample target is smaller than the source map");
  require(map.values.size() == map.height * map.width, ErrorCode::ShapeMismatch,
          "map values do not match dimensions");
  if (map.height == out.height && map.width == out.width) return map;

  const auto source_coord = [](std::size_t dst, std::size_t src_len, std::size_t dst_len) {
    const double s = (static_cast<double>(dst) + 0.5) * static_cast<double>(src_len) /
                         static_cast<double>(dst_len) -
                     0.5;
    return std::clamp(s, 0.0, static_cast<double>(src_len - 1));
  };

  Map2D result(out.height, out.width, 0.0);
  for (std::size_t y = 0; y < out.height; ++y) {
    const double sy = source_coord(y, map.height, out.height);
    const auto y0 = static_cast<std::size_t>(std::floor(sy));
    const std::size_t y1 = std::min(y0 + 1, map.height - 1);
    const double fy = sy - static_cast<double>(y0);
    for (std::size_t x = 0; x < out.width; ++x) {
      const double sx = source_coord(x, map.width, out.width);
      const auto x0 = static_cast<std::size_t>(std::floor(sx));
      const std::size_t x1 = std::min(x0 + 1, map.width - 1);
      const double fx = sx - static_cast<double>(x0);
      const double top = map.at(y0, x0) * (1.0 - fx) + map.at(y0, x1) * fx;
      const double bottom = map.at(y1, x0) * (1.0 - fx) + map.at(y1, x1) * fx;
      result.at(y, x) = top * (1.0 - fy) + bottom * fy;
    }
  }
  return result;
}

namespace cam_detail {

inline void check_bundle(const FeatureBundle& bundle) {
  require(bundle.feature_maps.same_shape(bundle.gradients), ErrorCode::ShapeMismatch,
          "feature maps and gradients differ in shape");
  require(bundle.feature_maps.channels > 0 && bundle.feature_maps.height > 0 &&
              bundle.feature_maps.width > 0,
          ErrorCode::ShapeMismatch, "empty feature bundle");
  require(bundle.feature_maps.values.size() == bundle.feature_maps.channels *
                                                   bundle.feature_maps.height *
                                                   bundle.feature_maps.width &&
              bundle.gradients.values.size() == bundle.feature_maps.values.size(),
          ErrorCode::ShapeMismatch, "feature bundle buffers do not match their shape");
}

/// ReLU(sum_k weight_k * A^k).
inline Map2D weighted_sum(const Tensor3& features, std::span<const double> weights) {
  Map2D raw(features.height, features.width, 0.0);
  for (std::size_t k = 0; k < features.channels; ++k) {
    const auto a = features.channel(k);
    for (std::size_t i = 0; i < a.size(); ++i) raw.values[i] += weights[k] * a[i];
  }
  for (double& v : raw.values) v = std::max(v, 0.0);
  return raw;
}

inline SaliencyMap finish(const Map2D& raw, ImageSize out_size, std::string method_id,
                          const TargetSpec& target) {
  const Map2D norm = normalize_map(upsample_map(raw, out_size));
  SaliencyMap s{out_size.height, out_size.width, norm.values, std::move(method_id), target,
                Mechanism::Gradient};
  // Bilinear weights are convex, so this only guards rounding.
  for (double& v : s.values) v = std::clamp(v, 0.0, 1.0);
  return s;
}

}  // namespace cam_detail

/// Rectified map before upsampling, exposed for tests and tooling.
inline Map2D grad_cam_raw(const FeatureBundle& bundle) {
  cam_detail::check_bundle(bundle);
  const auto& g = bundle.gradients;
  std::vector<double> alpha(g.channels, 0.0);
  for (std::size_t k = 0; k < g.channels; ++k) {
    const auto ch = g.channel(k);
    double sum = 0.0;
    for (double v : ch) sum += v;
    alpha[k] = sum / static_cast<double>(ch.size());
  }
  return cam_detail::weighted_sum(bundle.feature_maps, alpha);
}

inline Map2D grad_cam_pp_raw(const FeatureBundle& bundle) {
  cam_detail::check_bundle(bundle);
  const auto& a = bundle.feature_maps;
  const auto& g = bundle.gradients;
  std::vector<double> weights(a.channels, 0.0);
  for (std::size_t k = 0; k < a.channels; ++k) {
    const auto ak = a.channel(k);
    const auto gk = g.channel(k);
    double feature_sum = 0.0;
    for (double v : ak) feature_sum += v;
    double w = 0.0;
    for (std::size_t i = 0; i < gk.size(); ++i) {
      const double g2 = gk[i] * gk[i];
      const double denom = 2.0 * g2 + feature_sum * g2 * gk[i];
      // Zero denominators (including 0/0) carry no attribution.
      const double alpha = denom != 0.0 ? g2 / denom : 0.0;
      w += alpha * std::max(gk[i], 0.0);
    }
    weights[k] = w;
  }
  return cam_detail::weighted_sum(a, weights);
}

inline Map2D hires_cam_raw(const FeatureBundle& bundle) {
  cam_detail::check_bundle(bundle);
  const auto& a = bundle.feature_maps;
  const auto& g = bundle.gradients;
  Map2D raw(a.height, a.width, 0.0);
  for (std::size_t k = 0; k < a.channels; ++k) {
    const auto ak = a.channel(k);
    const auto gk = g.channel(k);
    for (std::size_t i = 0; i < ak.size(); ++i) raw.values[i] += gk[i] * ak[i];
  }
  for (double& v : raw.values) v = std::max(v, 0.0);
  return raw;
}

inline SaliencyMap grad_cam(const FeatureBundle& bundle, ImageSize out_size) {
  return cam_detail::finish(grad_cam_raw(bundle), out_size, "gradcam", bundle.target);
}

inline SaliencyMap grad_cam_pp(const FeatureBundle& bundle, ImageSize out_size) {
  return cam_detail::finish(grad_cam_pp_raw(bundle), out_size, "gradcam++", bundle.target);
}

inline SaliencyMap hires_cam(const FeatureBundle& bundle, ImageSize out_size) {
  return cam_detail::finish(hires_cam_raw(bundle), out_size, "hirescam", bundle.target);
}

}  // namespace langxai
