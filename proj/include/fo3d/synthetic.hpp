// Planted test scenes: colored fronto-parallel rectangles seen by a few pinhole cameras,
// and a tiny encoder whose features are a fixed function of patch color.

#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fo3d/scene.hpp"
#include "fo3d/tensor.hpp"
#include "fo3d/vit.hpp"

namespace fo3d {

struct PlantedRect {
  Eigen::Vector3d center;  // world, the rectangle spans center +- (half_w, half_h, 0)
  double half_w = 0.0;
  double half_h = 0.0;
  std::array<std::uint8_t, 3> color{};
  std::string name;
};

struct SyntheticSpec {
  int width = 320;
  int height = 240;
  double focal = 300.0;
  std::vector<double> camera_x = {-0.3, 0.0, 0.3};  // one view per entry
  int frame_id_step = 10;
  int points_per_rect = 300;
  double edge_margin = 0.06;  // meters kept clear of rectangle borders
  std::uint64_t seed = 7;
  std::vector<PlantedRect> rects;  // default layout when empty
  std::array<std::uint8_t, 3> background{90, 60, 120};
  double background_z = 4.5;
};

/// Five rectangles at three depths; the nearest one hides part of another from every view.
std::vector<PlantedRect> default_planted_rects();

struct SyntheticScene {
  std::vector<Frame> frames;
  std::vector<std::vector<std::int32_t>> pixel_labels;  // per frame, rect index or -1
  PointCloud cloud;
  std::vector<std::int32_t> labels;                     // per point rect index
  std::vector<PlantedRect> rects;
};

/// Z-buffered render plus points sampled on the rectangles. Points are kept only when
/// at least one view sees them (depth within 1 cm and the pixel shows their rectangle).
SyntheticScene make_planted_scene(const SyntheticSpec& spec);

/// Writes the scene in the directory layout read by load_frame / find_point_cloud,
/// plus labels.fot (i32 [N]) with the ground-truth rectangle index per point.
void write_synthetic_scene(const std::filesystem::path& dir, const SyntheticScene& scene);

/// image_size 32, patch 4, width 8, 2 heads, 2 layers. The patch embedding maps a patch's
/// mean color c to (c - 0.5, 0.5 - c, 0, 0); attention is uniform with identity values in
/// the first block, the second block and every MLP add nothing. A local token therefore
/// ends as the normalized mean of its patches' normalized color codes.
ViTWeights planted_vit_weights();

/// Global feature of the encoder on a constant image of each color, as a [K, C] tensor.
Tensor planted_class_embeddings(const ViTWeights& weights, const std::vector<std::array<std::uint8_t, 3>>& colors);

}  // namespace fo3d
