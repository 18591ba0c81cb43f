// Multi-scale crop schedule, patch -> super-pixel assignment, and fusion of per-crop
// feature maps back onto the full view.

#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "fo3d/feature_map.hpp"
#include "fo3d/superpixel.hpp"

namespace fo3d {

inline constexpr int kMinCropSize = 32;

struct CropRect {
  int x0 = 0;
  int y0 = 0;
  int w = 0;
  int h = 0;

  bool operator==(const CropRect&) const = default;
};

struct CropSpec {
  CropRect rect;
  int scale_level = 0;

  bool operator==(const CropSpec&) const = default;
};

/// Sliding windows of size round(s*W) x round(s*H) per scale, stepped by
/// stride_frac * size, with a last window clamped to the right/bottom edge.
/// Order is scale-major then row-major. Scales whose window would be smaller
/// than kMinCropSize are skipped with a warning.
std::vector<CropSpec> generate_crops(int view_w, int view_h, std::span<const double> scales,
                                     double stride_frac);

/// Patch grid (g x g) to super-pixel mapping for one crop.
struct PatchAssignment {
  int grid = 0;
  std::vector<std::int32_t> patch_to_superpixel;     // g*g, row-major patches
  std::vector<std::vector<std::int32_t>> token_sets; // per super-pixel: assigned patch indices
  std::vector<std::uint8_t> centroid_fallback;       // 1 where the set is the centroid patch

  int num_patches() const { return grid * grid; }
};

/// Majority super-pixel label over each patch's footprint in the native crop (ties to
/// the smallest label). Super-pixels that win no patch get the patch containing their
/// centroid as a singleton token set.
PatchAssignment assign_patches(const SuperpixelMap& spmap, int grid);

/// Running per-pixel sum and count for one view. Sums are kept in double so that
/// averaging identical inputs returns them unchanged.
class FusionAccumulator {
 public:
  FusionAccumulator(int width, int height, int channels);

  /// crop_map must have the crop rectangle's size.
  void add(const CropSpec& crop, const FeatureMap& crop_map);

  /// Same as add(crop, broadcast(features, spmap)) without materializing the crop map.
  void add_segments(const CropSpec& crop, const SuperpixelMap& spmap,
                    std::span<const float> segment_features);

  /// Per-pixel mean. Throws std::logic_error if some pixel was never covered.
  FeatureMap finalize() const;

  std::span<const std::uint32_t> count() const { return count_; }
  int channels() const { return channels_; }

 private:
  int width_;
  int height_;
  int channels_;
  std::vector<double> sum_;
  std::vector<std::uint32_t> count_;
};

/// Averages crop maps into a view-sized map. Inputs are accumulated in a canonical
/// order (scale level, y0, x0, then contents) so the result does not depend on
/// the order they are passed in. Throws std::invalid_argument on a channel mismatch.
FeatureMap stitch_and_fuse(std::vector<std::pair<CropSpec, FeatureMap>> crop_maps, int view_w,
                           int view_h);

}  // namespace fo3d
