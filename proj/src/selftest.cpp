#include "fo3d/selftest.hpp"

#include <cmath>
#include <functional>
#include <random>
#include <sstream>

#include "fo3d/distill.hpp"
#include "fo3d/metrics.hpp"
#include "fo3d/regions.hpp"
#include "fo3d/tensor.hpp"
#include "fo3d/vit.hpp"

namespace fo3d {

namespace {

std::string num(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

SelftestResult check_tensor_roundtrip() {
  std::vector<float> v = {1.5f, -0.0f, 3.25f, std::nanf(""), 1e-30f, -7.0f};
  const Tensor t = Tensor::from<float>({2, 3}, v);
  const Tensor back = decode_tensor(encode_tensor(t));
  return {"tensor round trip", back.bit_equal(t), "2x3 f32 with NaN and -0"};
}

SelftestResult check_crop_count() {
  const std::vector<double> scales = {1.0, 0.5, 0.25};
  const auto crops = generate_crops(640, 480, scales, 0.5);
  return {"crop schedule", crops.size() == 59, std::to_string(crops.size()) + " crops on 640x480"};
}

SelftestResult check_non_interference() {
  ViTConfig c;
  c.image_size = 32;
  c.patch_size = 8;
  c.width = 16;
  c.heads = 2;
  c.layers = 2;
  c.mlp_width = 32;
  c.embed_dim = 8;
  const ViTWeights w = random_vit_weights(c, 11, 0.1f);
  RgbImage img(32, 32);
  std::mt19937 rng(5);
  for (auto& b : img.data) b = static_cast<std::uint8_t>(rng() & 0xff);
  SuperpixelMap quads{32, 32, 0, std::vector<std::int32_t>(1024, 0), {}};
  for (int y = 0; y < 32; ++y) {
    for (int x = 0; x < 32; ++x) quads.labels[static_cast<std::size_t>(y) * 32 + x] = (y / 16) * 2 + x / 16;
  }
  compute_centroids(quads);
  const auto chw = preprocess_crop(img, c);
  ForwardTrace a, b;
  encode_tokens(patchify_and_embed(chw, w, 0), PatchAssignment{c.grid(), {}, {}, {}}, w, &a);
  encode_tokens(patchify_and_embed(chw, w, quads.n_segments), assign_patches(quads, c.grid()), w, &b);
  bool same = a.size() == b.size();
  for (std::size_t l = 0; same && l < a.size(); ++l) same = a[l].main == b[l].main;
  return {"local tokens leave global/patch tokens unchanged", same, std::to_string(a.size()) + " states compared"};
}

SelftestResult check_restricted_attention() {
  std::mt19937 rng(3);
  std::normal_distribution<float> nd;
  const int heads = 2, d = 8, m = 6;
  RowMatrix q(3, d), k(m, d), v(m, d);
  for (auto* mat : {&q, &k, &v}) {
    for (Eigen::Index i = 0; i < mat->size(); ++i) mat->data()[i] = nd(rng);
  }
  const std::vector<std::vector<std::int32_t>> sets = {{0, 2}, {5}, {1, 3, 4}};
  const RowMatrix out = restricted_attention(q, k, v, sets, heads);
  double err = 0.0;
  const int dh = d / heads;
  for (std::size_t j = 0; j < sets.size(); ++j) {
    for (int h = 0; h < heads; ++h) {
      std::vector<double> s;
      for (std::int32_t idx : sets[j]) {
        double dot = 0.0;
        for (int t = 0; t < dh; ++t) dot += double(q(static_cast<Eigen::Index>(j), h * dh + t)) * k(idx, h * dh + t);
        s.push_back(dot / std::sqrt(double(dh)));
      }
      double mx = s[0], z = 0.0;
      for (double x : s) mx = std::max(mx, x);
      for (double& x : s) z += (x = std::exp(x - mx));
      for (int t = 0; t < dh; ++t) {
        double acc = 0.0;
        for (std::size_t i = 0; i < s.size(); ++i) acc += s[i] / z * v(sets[j][i], h * dh + t);
        err = std::max(err, std::abs(acc - out(static_cast<Eigen::Index>(j), h * dh + t)));
      }
    }
  }
  return {"restricted attention matches direct evaluation", err < 1e-5, "max abs error " + num(err)};
}

SelftestResult check_loss_and_gradient() {
  PointCloud cloud;
  std::mt19937 rng(9);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  for (int i = 0; i < 12; ++i) cloud.positions.emplace_back(u(rng), u(rng), u(rng));
  const PointNetParams p = init_pointnet({6, 5, 4, 3}, 21);
  DistillScene sc{cloud, {}};
  sc.targets.channels = 4;
  for (int i = 0; i < 12; ++i) {
    sc.targets.view_count.push_back(i % 4 == 0 ? 0 : 1);
    for (int c = 0; c < 4; ++c) sc.targets.features.push_back(u(rng));
  }
  const MatrixT<float> out = predict_point_features(p, cloud);
  const double l1 = distill_loss(out, sc.targets).loss;
  const double l2 = distill_loss(MatrixT<float>(out * 3.5f), sc.targets).loss;
  const auto errs = pointnet_gradient_check(p, sc, 4, 1);
  double worst = 0.0;
  for (const auto& [name, e] : errs) worst = std::max(worst, e);
  const bool ok = l1 >= -1.0 && l1 <= 1.0 && std::abs(l1 - l2) < 1e-6 && worst < 1e-4;
  return {"distillation loss bounds, scale invariance, gradients", ok,
          "loss " + num(l1) + ", scaled " + num(l2) + ", worst gradient error " + num(worst)};
}

SelftestResult check_hiou() {
  const double a = hiou(58.6, 51.6), b = hiou(64.8, 26.1);
  const bool ok = std::abs(a - 54.9) <= 0.05 && std::abs(b - 37.2) <= 0.05;
  return {"hIoU reference values", ok, num(a) + ", " + num(b)};
}

SelftestResult check_constant_fusion() {
  const std::vector<double> scales = {1.0, 0.5, 0.25};
  const auto crops = generate_crops(160, 128, scales, 0.5);
  FusionAccumulator acc(160, 128, 3);
  const float value[3] = {0.1f, -2.7f, 1.0f / 3.0f};
  for (const auto& c : crops) {
    FeatureMap m(c.rect.w, c.rect.h, 3);
    for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] = value[i % 3];
    acc.add(c, m);
  }
  const FeatureMap f = acc.finalize();
  bool ok = true;
  for (std::size_t i = 0; i < f.data.size() && ok; ++i) ok = f.data[i] == value[i % 3];
  return {"fusion of constant crops is exact", ok, std::to_string(crops.size()) + " crops"};
}

SelftestResult check_schedule() {
  TrainSchedule s;
  const double expected = s.lr0 * s.decay * s.decay * s.decay * s.decay * s.decay;
  return {"learning-rate decay", s.lr_at(5000) == expected && s.lr_at(999) == s.lr0,
          "lr(5000) = " + num(s.lr_at(5000))};
}

}  // namespace

std::vector<SelftestResult> run_selftest() {
  const std::vector<std::function<SelftestResult()>> checks = {
      check_tensor_roundtrip, check_crop_count, check_non_interference, check_restricted_attention,
      check_loss_and_gradient, check_hiou, check_constant_fusion, check_schedule};
  std::vector<SelftestResult> out;
  for (const auto& c : checks) {
    try {
      out.push_back(c());
    } catch (const std::exception& e) {
      out.push_back({"(check threw)", false, e.what()});
    }
  }
  return out;
}

}  // namespace fo3d
