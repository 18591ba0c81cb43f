#include "fo3d/synthetic.hpp"

#include <Eigen/Geometry>
#include <cmath>
#include <random>
#include <stdexcept>

#include "fo3d/projection.hpp"

namespace fs = std::filesystem;

namespace fo3d {

std::vector<PlantedRect> default_planted_rects() {
  return {
      {{-0.9, -0.5, 3.0}, 0.45, 0.35, {220, 40, 40}, "red"},
      {{0.0, -0.5, 3.0}, 0.40, 0.35, {40, 200, 60}, "green"},
      {{0.9, -0.4, 3.2}, 0.45, 0.40, {40, 60, 220}, "blue"},
      {{-0.5, 0.5, 2.6}, 0.45, 0.35, {220, 210, 40}, "yellow"},
      {{0.2, -0.1, 2.2}, 0.30, 0.25, {40, 200, 210}, "cyan"},
  };
}

namespace {

Eigen::Matrix4d look_pose(double cam_x, double target_z) {
  const double theta = std::atan2(-cam_x, target_z);
  Eigen::Matrix4d pose = Eigen::Matrix4d::Identity();
  pose.topLeftCorner<3, 3>() = Eigen::AngleAxisd(theta, Eigen::Vector3d::UnitY()).toRotationMatrix();
  pose(0, 3) = cam_x;
  return pose;
}

}  // namespace

SyntheticScene make_planted_scene(const SyntheticSpec& spec) {
  if (spec.width < 1 || spec.height < 1 || spec.camera_x.empty()) {
    throw std::invalid_argument("make_planted_scene: empty image or no cameras");
  }
  SyntheticScene scene;
  scene.rects = spec.rects.empty() ? default_planted_rects() : spec.rects;
  const Intrinsics k{spec.focal, spec.focal, (spec.width - 1) / 2.0, (spec.height - 1) / 2.0};

  for (std::size_t vi = 0; vi < spec.camera_x.size(); ++vi) {
    Frame f;
    f.id = static_cast<int>(vi) * spec.frame_id_step;
    f.pose = look_pose(spec.camera_x[vi], 3.0);
    f.intrinsics = k;
    f.image = RgbImage(spec.width, spec.height);
    f.depth = DepthImage(spec.width, spec.height);
    std::vector<std::int32_t> labels(static_cast<std::size_t>(spec.width) * spec.height, -1);
    const Eigen::Matrix3d r = f.pose.topLeftCorner<3, 3>();
    const Eigen::Vector3d o = f.pose.topRightCorner<3, 1>();
    for (int v = 0; v < spec.height; ++v) {
      for (int u = 0; u < spec.width; ++u) {
        const Eigen::Vector3d d = r * Eigen::Vector3d((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
        // camera-frame depth of a hit equals the ray parameter since d_cam.z == 1
        double best_t = (spec.background_z - o.z()) / d.z();
        int best = -1;
        for (std::size_t ri = 0; ri < scene.rects.size(); ++ri) {
          const PlantedRect& rc = scene.rects[ri];
          const double t = (rc.center.z() - o.z()) / d.z();
          if (!(t > 0.0) || t >= best_t) continue;
          const Eigen::Vector3d hit = o + t * d;
          if (std::abs(hit.x() - rc.center.x()) <= rc.half_w && std::abs(hit.y() - rc.center.y()) <= rc.half_h) {
            best_t = t;
            best = static_cast<int>(ri);
          }
        }
        const auto& color = best < 0 ? spec.background : scene.rects[static_cast<std::size_t>(best)].color;
        std::copy(color.begin(), color.end(), f.image.at(u, v));
        f.depth.millimeters[static_cast<std::size_t>(v) * spec.width + u] =
            static_cast<std::uint16_t>(std::lround(best_t * 1000.0));
        labels[static_cast<std::size_t>(v) * spec.width + u] = best;
      }
    }
    scene.frames.push_back(std::move(f));
    scene.pixel_labels.push_back(std::move(labels));
  }

  std::mt19937_64 rng(spec.seed);
  std::vector<std::array<std::uint8_t, 3>> colors;
  for (std::size_t ri = 0; ri < scene.rects.size(); ++ri) {
    const PlantedRect& rc = scene.rects[ri];
    const double mw = rc.half_w - spec.edge_margin, mh = rc.half_h - spec.edge_margin;
    if (mw <= 0.0 || mh <= 0.0) throw std::invalid_argument("make_planted_scene: rectangle smaller than margin");
    std::uniform_real_distribution<double> ux(-mw, mw), uy(-mh, mh);
    int kept = 0;
    for (int attempt = 0; attempt < spec.points_per_rect * 20 && kept < spec.points_per_rect; ++attempt) {
      const Eigen::Vector3d p = rc.center + Eigen::Vector3d(ux(rng), uy(rng), 0.0);
      bool seen = false;
      for (std::size_t vi = 0; vi < scene.frames.size() && !seen; ++vi) {
        const Frame& f = scene.frames[vi];
        const auto proj = project_point(p, f.pose, f.intrinsics);
        if (!proj) continue;
        const double ur = std::floor(proj->u + 0.5), vr = std::floor(proj->v + 0.5);
        if (ur < 0 || vr < 0 || ur >= spec.width || vr >= spec.height) continue;
        const auto idx = static_cast<std::size_t>(vr) * spec.width + static_cast<std::size_t>(ur);
        seen = scene.pixel_labels[vi][idx] == static_cast<std::int32_t>(ri) &&
               std::abs(f.depth.millimeters[idx] / 1000.0 - proj->z) <= 0.01;
      }
      if (!seen) continue;
      scene.cloud.positions.push_back(p.cast<float>());
      colors.push_back(rc.color);
      scene.labels.push_back(static_cast<std::int32_t>(ri));
      ++kept;
    }
  }
  scene.cloud.colors = std::move(colors);
  return scene;
}

void write_synthetic_scene(const fs::path& dir, const SyntheticScene& scene) {
  for (const char* sub : {"color", "depth", "pose", "intrinsic"}) fs::create_directories(dir / sub);
  for (const Frame& f : scene.frames) {
    const std::string id = std::to_string(f.id);
    write_rgb_png(dir / "color" / (id + ".png"), f.image);
    write_depth_png(dir / "depth" / (id + ".png"), f.depth);
    write_pose_txt(dir / "pose" / (id + ".txt"), f.pose);
  }
  if (!scene.frames.empty()) write_intrinsics_txt(dir / "intrinsic" / "intrinsic_depth.txt", scene.frames.front().intrinsics);
  write_ply(dir / "cloud.ply", scene.cloud);
  write_tensor(dir / "labels.fot", Tensor::from<std::int32_t>({scene.labels.size()}, scene.labels));
}

ViTWeights planted_vit_weights() {
  ViTConfig c;
  c.image_size = 32;
  c.patch_size = 4;
  c.width = 8;
  c.heads = 2;
  c.layers = 2;
  c.mlp_width = 8;
  c.embed_dim = 8;
  c.ln_pre = false;
  c.patch_bias = true;
  c.mean = {0.0f, 0.0f, 0.0f};
  c.std = {1.0f, 1.0f, 1.0f};
  c.validate();

  const int d = c.width;
  const int pp = c.patch_size * c.patch_size;
  ViTWeights w;
  w.config = c;
  w.patch_embed.weight = RowMatrix::Zero(d, c.patch_dim());
  w.patch_embed.bias = Eigen::VectorXf::Zero(d);
  for (int ch = 0; ch < 3; ++ch) {
    for (int i = 0; i < pp; ++i) {
      w.patch_embed.weight(ch, ch * pp + i) = 1.0f / static_cast<float>(pp);
      w.patch_embed.weight(3 + ch, ch * pp + i) = -1.0f / static_cast<float>(pp);
    }
    w.patch_embed.bias[ch] = -0.5f;
    w.patch_embed.bias[3 + ch] = 0.5f;
  }
  w.class_token = Eigen::VectorXf::Zero(d);
  w.pos_embed = RowMatrix::Zero(c.num_patches() + 1, d);
  const LayerNorm unit{Eigen::VectorXf::Ones(d), Eigen::VectorXf::Zero(d)};
  for (int l = 0; l < c.layers; ++l) {
    BlockWeights b;
    b.ln1 = unit;
    b.qkv.weight = RowMatrix::Zero(3 * d, d);
    b.qkv.weight.bottomRows(d) = RowMatrix::Identity(d, d);
    b.qkv.bias = Eigen::VectorXf::Zero(3 * d);
    b.attn_out.weight = l == 0 ? RowMatrix(RowMatrix::Identity(d, d)) : RowMatrix(RowMatrix::Zero(d, d));
    b.attn_out.bias = Eigen::VectorXf::Zero(d);
    b.ln2 = unit;
    b.mlp_in = {RowMatrix::Zero(c.mlp_width, d), Eigen::VectorXf::Zero(c.mlp_width)};
    b.mlp_out = {RowMatrix::Zero(d, c.mlp_width), Eigen::VectorXf::Zero(d)};
    w.blocks.push_back(std::move(b));
  }
  w.ln_final = unit;
  w.proj = RowMatrix::Identity(c.embed_dim, d);
  w.validate();
  return w;
}

Tensor planted_class_embeddings(const ViTWeights& weights, const std::vector<std::array<std::uint8_t, 3>>& colors) {
  if (colors.empty()) throw std::invalid_argument("planted_class_embeddings: no colors");
  const int s = weights.config.image_size;
  const auto c = static_cast<std::size_t>(weights.config.embed_dim);
  std::vector<float> out;
  SuperpixelMap one{s, s, 1, std::vector<std::int32_t>(static_cast<std::size_t>(s) * s, 0), {}};
  compute_centroids(one);
  for (const auto& color : colors) {
    RgbImage img(s, s);
    for (int y = 0; y < s; ++y) {
      for (int x = 0; x < s; ++x) std::copy(color.begin(), color.end(), img.at(x, y));
    }
    const LocalFeatures f = forward_with_local_tokens(img, one, weights);
    out.insert(out.end(), f.global.data(), f.global.data() + c);
  }
  return Tensor::from<float>({colors.size(), c}, std::move(out));
}

}  // namespace fo3d
