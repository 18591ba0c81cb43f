#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace fo3d {

/// Interleaved 8-bit RGB image, row-major H x W x 3.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;

  RgbImage() = default;
  RgbImage(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, 0) {}

  std::uint8_t* at(int x, int y) { return &data[(static_cast<std::size_t>(y) * width + x) * 3]; }
  const std::uint8_t* at(int x, int y) const {
    return &data[(static_cast<std::size_t>(y) * width + x) * 3];
  }

  /// Copy of the rectangle [x0, x0 + w) x [y0, y0 + h).
  RgbImage crop(int x0, int y0, int w, int h) const;
};

/// 16-bit depth in millimeters; 0 marks an invalid pixel.
struct DepthImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint16_t> millimeters;

  DepthImage() = default;
  DepthImage(int w, int h) : width(w), height(h), millimeters(static_cast<std::size_t>(w) * h, 0) {}

  std::uint16_t raw(int x, int y) const {
    return millimeters[static_cast<std::size_t>(y) * width + x];
  }
  /// Depth in meters; 0.0f for invalid pixels.
  float meters(int x, int y) const { return static_cast<float>(raw(x, y)) / 1000.0f; }
};

RgbImage read_rgb_png(const std::filesystem::path& path);
DepthImage read_depth_png(const std::filesystem::path& path);
void write_rgb_png(const std::filesystem::path& path, const RgbImage& image);
void write_depth_png(const std::filesystem::path& path, const DepthImage& depth);

/// Single-channel 8-bit label image (labels taken modulo 256); debug output only.
void write_index_png(const std::filesystem::path& path, int width, int height,
                     const std::vector<std::int32_t>& labels);

}  // namespace fo3d
