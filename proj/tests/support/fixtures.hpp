// Shared test fixtures: temporary directories, random inputs, toy encoder configs.

#pragma once

#include <unistd.h>

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "fo3d/image.hpp"
#include "fo3d/scene.hpp"
#include "fo3d/superpixel.hpp"
#include "fo3d/vit.hpp"

namespace fo3d::test {

class TempDir {
 public:
  explicit TempDir(const std::string& tag = "fo3d") {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            (tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

inline RgbImage random_image(int w, int h, unsigned seed) {
  RgbImage img(w, h);
  std::mt19937 rng(seed);
  for (auto& b : img.data) b = static_cast<std::uint8_t>(rng() & 0xff);
  return img;
}

inline RgbImage constant_image(int w, int h, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  RgbImage img(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      img.at(x, y)[0] = r;
      img.at(x, y)[1] = g;
      img.at(x, y)[2] = b;
    }
  }
  return img;
}

/// Small encoder for fast exact checks.
inline ViTConfig toy_vit_config() {
  ViTConfig c;
  c.image_size = 32;
  c.patch_size = 4;
  c.width = 16;
  c.heads = 4;
  c.layers = 3;
  c.mlp_width = 32;
  c.embed_dim = 8;
  return c;
}

/// Label map made of a cols x rows grid of equal blocks.
inline SuperpixelMap block_labels(int w, int h, int cols, int rows) {
  SuperpixelMap m;
  m.width = w;
  m.height = h;
  m.labels.resize(static_cast<std::size_t>(w) * h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      m.labels[static_cast<std::size_t>(y) * w + x] = (y * rows / h) * cols + x * cols / w;
    }
  }
  compute_centroids(m);
  return m;
}

inline PointCloud random_cloud(int n, unsigned seed, float extent = 1.0f, bool colors = true) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> u(-extent, extent);
  PointCloud c;
  std::vector<std::array<std::uint8_t, 3>> col;
  for (int i = 0; i < n; ++i) {
    c.positions.emplace_back(u(rng), u(rng), u(rng));
    col.push_back({static_cast<std::uint8_t>(rng() & 0xff), static_cast<std::uint8_t>(rng() & 0xff),
                   static_cast<std::uint8_t>(rng() & 0xff)});
  }
  if (colors) c.colors = col;
  return c;
}

}  // namespace fo3d::test
