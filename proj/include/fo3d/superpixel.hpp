// SLIC super-pixels on an RGB crop.

#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "fo3d/image.hpp"

namespace fo3d {

/// Dense partition of a W x H crop into n_segments 4-connected regions.
struct SuperpixelMap {
  int width = 0;
  int height = 0;
  int n_segments = 0;
  std::vector<std::int32_t> labels;             // row-major, values in [0, n_segments)
  std::vector<std::array<float, 2>> centroids;  // (x, y) mean pixel coordinate per segment

  std::int32_t at(int x, int y) const { return labels[static_cast<std::size_t>(y) * width + x]; }
};

struct SlicParams {
  int n_segments = 50;
  double compactness = 10.0;
  int iterations = 10;
};

struct SlicTrace {
  int seeds = 0;                 // grid seeds actually placed
  std::vector<double> objective; // sum of combined distances after each iteration
};

/// CIELAB (D65 white) of an sRGB triple.
std::array<double, 3> srgb_to_lab(std::uint8_t r, std::uint8_t g, std::uint8_t b);

/// Seed grid dimensions (columns, rows) used for a W x H crop and a requested segment count.
std::array<int, 2> slic_grid(int width, int height, int n_segments);

/// K-means in (L, a, b, x, y) with spatial weight compactness / S, S = sqrt(W*H/K),
/// followed by connectivity enforcement. The returned n_segments is the final count.
/// Throws std::invalid_argument if n_segments < 1 or n_segments > W*H.
SuperpixelMap slic(const RgbImage& image, const SlicParams& params, SlicTrace* trace = nullptr);

/// Makes every label 4-connected: splits disconnected labels, merges components smaller
/// than (W*H / n)/4 into their largest neighbouring component, then relabels compactly
/// ordered by (input label, first pixel). n defaults to the number of distinct input labels.
SuperpixelMap enforce_connectivity(const std::vector<std::int32_t>& labels, int width, int height,
                                   int n_expected = 0);

/// Fills in n_segments and centroids from labels (labels must already be compact).
void compute_centroids(SuperpixelMap& map);

}  // namespace fo3d
