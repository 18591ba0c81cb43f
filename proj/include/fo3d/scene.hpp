// Scene dataset conventions.
//
// A scene directory follows the layout written by the ScanNet frame exporter:
//
//   <scene>/color/<id>.png|.jpg      8-bit color
//   <scene>/depth/<id>.png           16-bit depth in millimeters, 0 = invalid
//   <scene>/pose/<id>.txt            4x4 camera-to-world, row-major text
//   <scene>/intrinsic/<id>.txt       fx fy cx cy, or a 4x4 matrix; falls back to
//                                    intrinsic/intrinsic_depth.txt when absent
//   <scene>/cloud.ply                point cloud (or the first *.ply found)
//
// Intrinsics always refer to the depth resolution.

#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fo3d/image.hpp"

namespace fo3d {

struct Intrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
};

/// One RGB-D view.
struct Frame {
  int id = 0;
  RgbImage image;
  DepthImage depth;
  Eigen::Matrix4d pose = Eigen::Matrix4d::Identity();  // camera-to-world
  Intrinsics intrinsics;                               // depth resolution
};

struct PointCloud {
  std::vector<Eigen::Vector3f> positions;
  std::optional<std::vector<std::array<std::uint8_t, 3>>> colors;

  std::size_t size() const { return positions.size(); }
};

/// Throws LoadError unless the pose is rigid: bottom row (0,0,0,1) and
/// ||R^T R - I||_F <= tolerance.
void validate_pose(const Eigen::Matrix4d& pose, double tolerance = 1e-3);

Eigen::Matrix4d read_pose_txt(const std::filesystem::path& path);
void write_pose_txt(const std::filesystem::path& path, const Eigen::Matrix4d& pose);
Intrinsics read_intrinsics_txt(const std::filesystem::path& path);
void write_intrinsics_txt(const std::filesystem::path& path, const Intrinsics& k);

/// Frame ids present under <scene>/depth, ascending.
std::vector<int> list_frame_ids(const std::filesystem::path& scene_dir);

Frame load_frame(const std::filesystem::path& scene_dir, int frame_id);

/// Ids at positions 0, stride, 2*stride, ... of a sorted id list.
std::vector<int> subsample_frames(const std::vector<int>& frame_ids, int stride);

std::filesystem::path find_point_cloud(const std::filesystem::path& scene_dir);

/// ASCII or binary little-endian PLY; reads x/y/z and optional red/green/blue of the vertex element.
PointCloud read_ply(const std::filesystem::path& path);

/// Binary little-endian PLY with float xyz and uchar rgb.
void write_ply(const std::filesystem::path& path, const PointCloud& cloud);

}  // namespace fo3d
