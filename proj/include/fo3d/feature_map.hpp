#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "fo3d/tensor.hpp"

namespace fo3d {

/// Per-pixel features, row-major H x W x C.
struct FeatureMap {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<float> data;

  FeatureMap() = default;
  FeatureMap(int w, int h, int c)
      : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, 0.0f) {}

  std::span<float> at(int x, int y) {
    return {data.data() + (static_cast<std::size_t>(y) * width + x) * channels,
            static_cast<std::size_t>(channels)};
  }
  std::span<const float> at(int x, int y) const {
    return {data.data() + (static_cast<std::size_t>(y) * width + x) * channels,
            static_cast<std::size_t>(channels)};
  }

  /// f32 tensor of shape [H, W, C].
  Tensor to_tensor() const;
  static FeatureMap from_tensor(const Tensor& t);
};

}  // namespace fo3d
