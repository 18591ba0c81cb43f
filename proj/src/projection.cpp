#include "fo3d/projection.hpp"

#include <Eigen/Geometry>
#include <Eigen/LU>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "fo3d/errors.hpp"
#include "fo3d/tensor.hpp"

namespace fs = std::filesystem;

namespace fo3d {

Eigen::Matrix4d world_to_camera(const Eigen::Matrix4d& camera_to_world) {
  Eigen::Matrix4d inv;
  bool invertible = false;
  camera_to_world.computeInverseWithCheck(inv, invertible, 1e-12);
  if (!invertible || !inv.allFinite()) throw DataError("camera pose is not invertible");
  return inv;
}

std::optional<PixelProjection> project_with_extrinsics(const Eigen::Vector3d& p_world,
                                                       const Eigen::Matrix4d& world_to_cam,
                                                       const Intrinsics& k) {
  const Eigen::Vector4d pc = world_to_cam * p_world.homogeneous();
  const double z = pc.z();
  if (!(z > kMinProjectedDepth)) return std::nullopt;
  return PixelProjection{k.fx * pc.x() / z + k.cx, k.fy * pc.y() / z + k.cy, z};
}

std::optional<PixelProjection> project_point(const Eigen::Vector3d& p_world,
                                             const Eigen::Matrix4d& camera_to_world,
                                             const Intrinsics& k) {
  return project_with_extrinsics(p_world, world_to_camera(camera_to_world), k);
}

Eigen::Vector3d unproject(double u, double v, double z, const Eigen::Matrix4d& camera_to_world,
                          const Intrinsics& k) {
  const Eigen::Vector4d pc((u - k.cx) * z / k.fx, (v - k.cy) * z / k.fy, z, 1.0);
  return (camera_to_world * pc).head<3>();
}

bool depth_filter(double z, double u, double v, const DepthImage& depth, double tau) {
  const double ur = std::floor(u + 0.5);
  const double vr = std::floor(v + 0.5);
  if (!(ur >= 0.0 && vr >= 0.0 && ur < depth.width && vr < depth.height)) return false;
  const std::uint16_t raw = depth.raw(static_cast<int>(ur), static_cast<int>(vr));
  if (raw == 0) return false;
  const double sensor = static_cast<double>(depth.meters(static_cast<int>(ur), static_cast<int>(vr)));
  return std::abs(z - sensor) <= tau;
}

std::array<int, 2> depth_to_feature_pixel(double u, double v, const DepthImage& depth,
                                          const FeatureMap& features) {
  const double sx = static_cast<double>(features.width) / depth.width;
  const double sy = static_cast<double>(features.height) / depth.height;
  // nearest pixel to the rescaled continuous coordinate (u + 0.5) * s - 0.5
  const double fu = std::floor((u + 0.5) * sx);
  const double fv = std::floor((v + 0.5) * sy);
  return {std::clamp(static_cast<int>(fu), 0, features.width - 1),
          std::clamp(static_cast<int>(fv), 0, features.height - 1)};
}

std::vector<Visibility> compute_visibility(const PointCloud& cloud, const ViewFeatures& view,
                                           double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("depth tolerance must be > 0");
  const Eigen::Matrix4d w2c = world_to_camera(view.pose);
  std::vector<Visibility> out(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto proj = project_with_extrinsics(cloud.positions[i].cast<double>(), w2c, view.intrinsics);
    if (!proj) continue;
    out[i] = {depth_filter(proj->z, proj->u, proj->v, view.depth, tau), proj->u, proj->v, proj->z};
  }
  return out;
}

std::size_t TargetFeatures::valid_count() const {
  return static_cast<std::size_t>(
      std::count_if(view_count.begin(), view_count.end(), [](std::uint32_t c) { return c > 0; }));
}

MultiViewAccumulator::MultiViewAccumulator(const PointCloud& cloud, int channels, double tau)
    : cloud_(cloud),
      channels_(channels),
      tau_(tau),
      sum_(cloud.size() * static_cast<std::size_t>(channels), 0.0),
      count_(cloud.size(), 0) {
  if (channels < 1) throw std::invalid_argument("fuse_multiview: channels must be >= 1");
  if (!(tau > 0.0)) throw std::invalid_argument("fuse_multiview: tau must be > 0");
}

void MultiViewAccumulator::add(const ViewFeatures& view) {
  if (view.features.channels != channels_) throw std::invalid_argument("fuse_multiview: channel mismatch");
  if (views_added_ > 0 && view.frame_id < last_frame_id_) {
    throw std::invalid_argument("fuse_multiview: views must arrive in non-decreasing frame id");
  }
  const Eigen::Matrix4d w2c = world_to_camera(view.pose);
  const auto n = static_cast<std::ptrdiff_t>(cloud_.size());
  const auto c = static_cast<std::size_t>(channels_);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t pi = 0; pi < n; ++pi) {
    const auto i = static_cast<std::size_t>(pi);
    const auto proj = project_with_extrinsics(cloud_.positions[i].cast<double>(), w2c, view.intrinsics);
    if (!proj || !depth_filter(proj->z, proj->u, proj->v, view.depth, tau_)) continue;
    const auto [fu, fv] = depth_to_feature_pixel(proj->u, proj->v, view.depth, view.features);
    const auto f = view.features.at(fu, fv);
    double* dst = sum_.data() + i * c;
    for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += f[ch];
    ++count_[i];
  }
  last_frame_id_ = view.frame_id;
  ++views_added_;
}

TargetFeatures MultiViewAccumulator::finalize() const {
  TargetFeatures out;
  out.channels = channels_;
  out.view_count = count_;
  out.features.assign(sum_.size(), 0.0f);
  const auto c = static_cast<std::size_t>(channels_);
  for (std::size_t i = 0; i < count_.size(); ++i) {
    if (count_[i] == 0) continue;
    const double n = count_[i];
    for (std::size_t ch = 0; ch < c; ++ch) out.features[i * c + ch] = static_cast<float>(sum_[i * c + ch] / n);
  }
  return out;
}

TargetFeatures fuse_multiview(const PointCloud& cloud, std::span<const ViewFeatures> views,
                              double tau) {
  if (views.empty()) throw std::invalid_argument("fuse_multiview: no views");
  std::vector<std::size_t> order(views.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return views[a].frame_id < views[b].frame_id; });
  MultiViewAccumulator acc(cloud, views.front().features.channels, tau);
  for (std::size_t vi : order) acc.add(views[vi]);
  return acc.finalize();
}

void save_target_features(const fs::path& dir, const TargetFeatures& t) {
  fs::create_directories(dir);
  write_tensor(dir / "target_features.fot",
               Tensor::from<float>({t.size(), static_cast<std::size_t>(t.channels)}, t.features));
  std::vector<std::int32_t> counts(t.view_count.begin(), t.view_count.end());
  write_tensor(dir / "target_view_count.fot", Tensor::from<std::int32_t>({t.size()}, counts));
}

TargetFeatures load_target_features(const fs::path& dir) {
  const Tensor f = read_tensor_as(dir / "target_features.fot", DType::kF32, 2);
  const Tensor n = read_tensor_as(dir / "target_view_count.fot", DType::kI32, 1);
  if (n.dim(0) != f.dim(0)) throw FormatError("target features and view counts disagree in length");
  TargetFeatures t;
  t.channels = static_cast<int>(f.dim(1));
  t.features.assign(f.values<float>().begin(), f.values<float>().end());
  for (std::int32_t v : n.values<std::int32_t>()) {
    if (v < 0) throw FormatError("negative view count");
    t.view_count.push_back(static_cast<std::uint32_t>(v));
  }
  return t;
}

}  // namespace fo3d
