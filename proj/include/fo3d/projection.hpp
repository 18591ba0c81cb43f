// Point -> pixel projection, depth-consistency filtering and multi-view feature averaging.
//
// Points live in world coordinates; the world-to-grid transform of voxel pipelines is
// the identity here. Pixel (u, v) uses the convention that integer coordinates are pixel
// centers, so the nearest pixel is round(u), round(v).

#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "fo3d/feature_map.hpp"
#include "fo3d/scene.hpp"

namespace fo3d {

inline constexpr double kMinProjectedDepth = 1e-6;  // meters
inline constexpr double kDefaultDepthTolerance = 0.10;  // meters

struct PixelProjection {
  double u = 0.0;
  double v = 0.0;
  double z = 0.0;
};

/// Inverse of a camera-to-world pose. Throws DataError if the matrix is singular.
Eigen::Matrix4d world_to_camera(const Eigen::Matrix4d& camera_to_world);

/// nullopt when the point is behind the camera (z <= kMinProjectedDepth).
std::optional<PixelProjection> project_point(const Eigen::Vector3d& p_world,
                                             const Eigen::Matrix4d& camera_to_world,
                                             const Intrinsics& k);

/// Same, with a precomputed world-to-camera matrix.
std::optional<PixelProjection> project_with_extrinsics(const Eigen::Vector3d& p_world,
                                                       const Eigen::Matrix4d& world_to_cam,
                                                       const Intrinsics& k);

Eigen::Vector3d unproject(double u, double v, double z, const Eigen::Matrix4d& camera_to_world,
                          const Intrinsics& k);

/// Nearest depth pixel of (u, v) inside the map, valid (non-zero), and within tau of z.
bool depth_filter(double z, double u, double v, const DepthImage& depth, double tau);

/// Everything fuse_multiview needs from one view.
struct ViewFeatures {
  int frame_id = 0;
  Eigen::Matrix4d pose = Eigen::Matrix4d::Identity();  // camera-to-world
  Intrinsics intrinsics;                               // depth resolution
  DepthImage depth;
  FeatureMap features;                                 // color resolution
};

struct Visibility {
  bool valid = false;
  double u = 0.0;
  double v = 0.0;
  double z = 0.0;
};

/// Projection + depth test of every point into one view.
std::vector<Visibility> compute_visibility(const PointCloud& cloud, const ViewFeatures& view,
                                           double tau);

/// Feature-map pixel that a depth-resolution coordinate maps to (nearest neighbour).
std::array<int, 2> depth_to_feature_pixel(double u, double v, const DepthImage& depth,
                                          const FeatureMap& features);

struct TargetFeatures {
  int channels = 0;
  std::vector<float> features;           // N_p x C; zero rows where invalid
  std::vector<std::uint32_t> view_count; // N_p

  std::size_t size() const { return view_count.size(); }
  bool valid(std::size_t i) const { return view_count[i] > 0; }
  std::size_t valid_count() const;
  std::span<const float> row(std::size_t i) const {
    return {features.data() + i * static_cast<std::size_t>(channels), static_cast<std::size_t>(channels)};
  }
};

/// Streaming form of fuse_multiview: views must be added in ascending frame id, so a
/// scene can be fused without holding every feature map in memory.
class MultiViewAccumulator {
 public:
  MultiViewAccumulator(const PointCloud& cloud, int channels, double tau = kDefaultDepthTolerance);

  /// Throws std::invalid_argument on a channel mismatch or a frame id lower than the previous one.
  void add(const ViewFeatures& view);
  TargetFeatures finalize() const;
  std::size_t views_added() const { return views_added_; }

 private:
  const PointCloud& cloud_;
  int channels_;
  double tau_;
  std::vector<double> sum_;
  std::vector<std::uint32_t> count_;
  std::size_t views_added_ = 0;
  int last_frame_id_ = 0;
};

/// Mean of the pixel features of every (view, pixel) pair passing the depth filter.
/// Views are accumulated in ascending frame id so the result is independent of the
/// order they are passed in. Throws std::invalid_argument with no views or mixed C.
TargetFeatures fuse_multiview(const PointCloud& cloud, std::span<const ViewFeatures> views,
                              double tau = kDefaultDepthTolerance);

/// <dir>/target_features.fot (f32 [N, C]) and <dir>/target_view_count.fot (i32 [N]).
void save_target_features(const std::filesystem::path& dir, const TargetFeatures& t);
TargetFeatures load_target_features(const std::filesystem::path& dir);

}  // namespace fo3d
