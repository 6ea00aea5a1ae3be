#pragma once

// Shared builders for test inputs.

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "langxai/model_zoo.hpp"

namespace fixture {

inline langxai::ImageTensor gray(std::size_t h, std::size_t w, std::vector<double> v) {
  return langxai::ImageTensor(h, w, 1, std::move(v));
}

/// Error code raised by `fn`, or nullopt when it returns normally.
inline std::optional<langxai::ErrorCode> code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const langxai::Error& e) {
    return e.code();
  }
  return std::nullopt;
}

inline langxai::FeatureBundle bundle(std::size_t k, std::size_t h, std::size_t w,
                                     std::vector<double> features, std::vector<double> grads) {
  return {langxai::Tensor3(k, h, w, std::move(features)),
          langxai::Tensor3(k, h, w, std::move(grads)), "fixture", langxai::ClassTarget{0}};
}

/// Random bundle; when `uniform_grads` is set every channel's gradient is a
/// single constant.
inline langxai::FeatureBundle random_bundle(std::mt19937_64& rng, bool uniform_grads) {
  std::uniform_int_distribution<std::size_t> dim(1, 6);
  std::uniform_real_distribution<double> feat(0.0, 2.0);
  std::uniform_real_distribution<double> grad(-1.0, 1.0);
  const std::size_t k = dim(rng), h = dim(rng), w = dim(rng);
  std::vector<double> a(k * h * w), g(k * h * w);
  for (double& v : a) v = feat(rng);
  for (std::size_t c = 0; c < k; ++c) {
    const double constant = grad(rng);
    for (std::size_t i = 0; i < h * w; ++i) {
      g[c * h * w + i] = uniform_grads ? constant : grad(rng);
    }
  }
  return bundle(k, h, w, std::move(a), std::move(g));
}

inline langxai::ImageTensor random_image(std::mt19937_64& rng, std::size_t h, std::size_t w,
                                         std::size_t c) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> px(h * w * c);
  for (double& v : px) v = u(rng);
  return langxai::ImageTensor(h, w, c, std::move(px));
}

}  // namespace fixture
