#include "fo3d/regions.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "fo3d/log.hpp"

namespace fo3d {

namespace {

std::vector<int> window_starts(int extent, int size, int step) {
  std::vector<int> starts;
  for (int p = 0; p + size < extent; p += step) starts.push_back(p);
  starts.push_back(extent - size);
  std::sort(starts.begin(), starts.end());
  starts.erase(std::unique(starts.begin(), starts.end()), starts.end());
  return starts;
}

// Range of native pixels whose centers fall into cell `cell` of `cells` equal cells
// spanning `extent` pixels. Falls back to the pixel under the cell center when no
// pixel center lands inside (extent < cells).
std::pair<int, int> footprint(int cell, int cells, int extent) {
  // pixel x is in cell floor((x + 0.5) * cells / extent)
  int lo = static_cast<int>(std::ceil(static_cast<double>(cell) * extent / cells - 0.5));
  int hi = static_cast<int>(std::ceil(static_cast<double>(cell + 1) * extent / cells - 0.5));
  lo = std::clamp(lo, 0, extent);
  hi = std::clamp(hi, 0, extent);
  if (lo >= hi) {
    const int x = std::clamp(static_cast<int>((cell + 0.5) * extent / cells), 0, extent - 1);
    return {x, x + 1};
  }
  return {lo, hi};
}

}  // namespace

std::vector<CropSpec> generate_crops(int view_w, int view_h, std::span<const double> scales,
                                     double stride_frac) {
  if (view_w < 1 || view_h < 1) throw std::invalid_argument("generate_crops: empty view");
  if (!(stride_frac > 0.0 && stride_frac <= 1.0)) {
    throw std::invalid_argument("generate_crops: stride_frac must be in (0, 1]");
  }
  std::vector<CropSpec> crops;
  for (std::size_t level = 0; level < scales.size(); ++level) {
    const double s = scales[level];
    if (!(s > 0.0 && s <= 1.0)) throw std::invalid_argument("generate_crops: scales must be in (0, 1]");
    const int cw = static_cast<int>(std::lround(s * view_w));
    const int ch = static_cast<int>(std::lround(s * view_h));
    if (cw < kMinCropSize || ch < kMinCropSize) {
      std::ostringstream msg;
      msg << "crop scale " << s << " gives a " << cw << "x" << ch << " window on a " << view_w
          << "x" << view_h << " view (minimum " << kMinCropSize << "); scale skipped";
      log_warning(msg.str());
      continue;
    }
    const int sx = std::max(1, static_cast<int>(std::lround(stride_frac * cw)));
    const int sy = std::max(1, static_cast<int>(std::lround(stride_frac * ch)));
    for (int y0 : window_starts(view_h, ch, sy)) {
      for (int x0 : window_starts(view_w, cw, sx)) {
        const CropRect rect{x0, y0, cw, ch};
        const bool seen = std::any_of(crops.begin(), crops.end(),
                                      [&](const CropSpec& c) { return c.rect == rect; });
        if (!seen) crops.push_back({rect, static_cast<int>(level)});
      }
    }
  }
  return crops;
}

PatchAssignment assign_patches(const SuperpixelMap& spmap, int grid) {
  if (grid < 1) throw std::invalid_argument("assign_patches: grid must be >= 1");
  if (spmap.n_segments < 1) throw std::invalid_argument("assign_patches: empty super-pixel map");
  PatchAssignment out;
  out.grid = grid;
  out.patch_to_superpixel.assign(static_cast<std::size_t>(grid) * grid, -1);
  out.token_sets.assign(static_cast<std::size_t>(spmap.n_segments), {});
  out.centroid_fallback.assign(static_cast<std::size_t>(spmap.n_segments), 0);

  std::vector<std::int64_t> votes(static_cast<std::size_t>(spmap.n_segments), 0);
  for (int row = 0; row < grid; ++row) {
    const auto [y0, y1] = footprint(row, grid, spmap.height);
    for (int col = 0; col < grid; ++col) {
      const auto [x0, x1] = footprint(col, grid, spmap.width);
      std::fill(votes.begin(), votes.end(), 0);
      for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) ++votes[static_cast<std::size_t>(spmap.at(x, y))];
      }
      // max_element returns the first maximum, i.e. the smallest label on ties.
      const auto winner = static_cast<std::int32_t>(std::max_element(votes.begin(), votes.end()) - votes.begin());
      const int patch = row * grid + col;
      out.patch_to_superpixel[static_cast<std::size_t>(patch)] = winner;
      out.token_sets[static_cast<std::size_t>(winner)].push_back(patch);
    }
  }

  for (int seg = 0; seg < spmap.n_segments; ++seg) {
    auto& set = out.token_sets[static_cast<std::size_t>(seg)];
    if (!set.empty()) continue;
    const auto& c = spmap.centroids.at(static_cast<std::size_t>(seg));
    const int col = std::clamp(static_cast<int>((c[0] + 0.5) * grid / spmap.width), 0, grid - 1);
    const int row = std::clamp(static_cast<int>((c[1] + 0.5) * grid / spmap.height), 0, grid - 1);
    set.push_back(row * grid + col);
    out.centroid_fallback[static_cast<std::size_t>(seg)] = 1;
  }
  return out;
}

FusionAccumulator::FusionAccumulator(int width, int height, int channels)
    : width_(width),
      height_(height),
      channels_(channels),
      sum_(static_cast<std::size_t>(width) * height * channels, 0.0),
      count_(static_cast<std::size_t>(width) * height, 0) {
  if (width < 1 || height < 1 || channels < 1) {
    throw std::invalid_argument("FusionAccumulator: dimensions must be >= 1");
  }
}

void FusionAccumulator::add(const CropSpec& crop, const FeatureMap& crop_map) {
  const CropRect& r = crop.rect;
  if (crop_map.channels != channels_) throw std::invalid_argument("stitch: channel mismatch");
  if (crop_map.width != r.w || crop_map.height != r.h) {
    throw std::invalid_argument("stitch: crop map size differs from its rectangle");
  }
  if (r.x0 < 0 || r.y0 < 0 || r.x0 + r.w > width_ || r.y0 + r.h > height_) {
    throw std::invalid_argument("stitch: crop rectangle outside the view");
  }
  for (int y = 0; y < r.h; ++y) {
    for (int x = 0; x < r.w; ++x) {
      const std::size_t p = static_cast<std::size_t>(r.y0 + y) * width_ + (r.x0 + x);
      const auto f = crop_map.at(x, y);
      double* dst = sum_.data() + p * channels_;
      for (int c = 0; c < channels_; ++c) dst[c] += f[static_cast<std::size_t>(c)];
      ++count_[p];
    }
  }
}

void FusionAccumulator::add_segments(const CropSpec& crop, const SuperpixelMap& spmap,
                                     std::span<const float> segment_features) {
  const CropRect& r = crop.rect;
  if (spmap.width != r.w || spmap.height != r.h) {
    throw std::invalid_argument("stitch: super-pixel map size differs from its rectangle");
  }
  if (segment_features.size() != static_cast<std::size_t>(spmap.n_segments) * channels_) {
    throw std::invalid_argument("stitch: channel mismatch");
  }
  if (r.x0 < 0 || r.y0 < 0 || r.x0 + r.w > width_ || r.y0 + r.h > height_) {
    throw std::invalid_argument("stitch: crop rectangle outside the view");
  }
  for (int y = 0; y < r.h; ++y) {
    for (int x = 0; x < r.w; ++x) {
      const std::size_t p = static_cast<std::size_t>(r.y0 + y) * width_ + (r.x0 + x);
      const float* f = segment_features.data() + static_cast<std::size_t>(spmap.at(x, y)) * channels_;
      double* dst = sum_.data() + p * channels_;
      for (int c = 0; c < channels_; ++c) dst[c] += f[c];
      ++count_[p];
    }
  }
}

FeatureMap FusionAccumulator::finalize() const {
  FeatureMap out(width_, height_, channels_);
  for (std::size_t p = 0; p < count_.size(); ++p) {
    if (count_[p] == 0) throw std::logic_error("stitch: pixel not covered by any crop");
    const double n = count_[p];
    for (int c = 0; c < channels_; ++c) {
      out.data[p * channels_ + c] = static_cast<float>(sum_[p * channels_ + c] / n);
    }
  }
  return out;
}

FeatureMap stitch_and_fuse(std::vector<std::pair<CropSpec, FeatureMap>> crop_maps, int view_w,
                           int view_h) {
  if (crop_maps.empty()) throw std::invalid_argument("stitch_and_fuse: no crops");
  const int channels = crop_maps.front().second.channels;
  for (const auto& [spec, map] : crop_maps) {
    if (map.channels != channels) throw std::invalid_argument("stitch_and_fuse: channel mismatch");
  }
  std::sort(crop_maps.begin(), crop_maps.end(), [](const auto& a, const auto& b) {
    const CropSpec& x = a.first;
    const CropSpec& y = b.first;
    if (x.scale_level != y.scale_level) return x.scale_level < y.scale_level;
    if (x.rect.y0 != y.rect.y0) return x.rect.y0 < y.rect.y0;
    if (x.rect.x0 != y.rect.x0) return x.rect.x0 < y.rect.x0;
    if (x.rect.h != y.rect.h) return x.rect.h < y.rect.h;
    if (x.rect.w != y.rect.w) return x.rect.w < y.rect.w;
    return std::lexicographical_compare(a.second.data.begin(), a.second.data.end(),
                                        b.second.data.begin(), b.second.data.end());
  });
  FusionAccumulator acc(view_w, view_h, channels);
  for (const auto& [spec, map] : crop_maps) acc.add(spec, map);
  return acc.finalize();
}

}  // namespace fo3d
