// Feature distillation: a small point network regressing per-point target features
// under mean negative cosine similarity, trained with plain SGD.

#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <tuple>
#include <span>
#include <string>
#include <vector>

#include "fo3d/matrix.hpp"
#include "fo3d/projection.hpp"
#include "fo3d/scene.hpp"

namespace fo3d {

inline constexpr double kDegenerateNorm = 1e-12;

/// Per-point MLP with one k-NN mean-pooling layer:
///   h1 = tanh(W1 x + b1); p = mean_{j in knn(i)} h1_j; h2 = tanh(W2 p + b2); f = W3 h2 + b3
/// where x = (xyz - centroid, rgb / 255).
struct PointNetConfig {
  int in_dim = 6;
  int hidden = 64;
  int out_dim = 512;
  int knn = 16;
};

/// Offsets of each tensor inside the flat parameter vector.
struct ParamLayout {
  std::size_t w1, b1, w2, b2, w3, b3, total;
  static ParamLayout of(const PointNetConfig& c);
  /// (name, offset, size) for every tensor, in storage order.
  std::vector<std::tuple<std::string, std::size_t, std::size_t>> tensors(const PointNetConfig& c) const;
};

template <class T>
struct PointNetParamsT {
  PointNetConfig config;
  std::vector<T> values;

  std::size_t parameter_count() const { return values.size(); }
};
using PointNetParams = PointNetParamsT<float>;

/// Xavier-normal weights, zero biases.
PointNetParams init_pointnet(const PointNetConfig& config, std::uint64_t seed);

/// Neighbour lists (self included), k' = min(k, N) per point, ties broken by index.
struct NeighborTable {
  int k = 0;
  std::vector<std::int32_t> indices;  // N x k
};
NeighborTable build_knn(const std::vector<Eigen::Vector3f>& positions, int k);

/// N x 6 network inputs for a cloud (missing colors read as mid-gray).
MatrixT<float> point_inputs(const PointCloud& cloud);

template <class T>
struct ForwardCache {
  MatrixT<T> h1, pooled, h2;
};

template <class T>
MatrixT<T> forward_pointnet(const PointNetParamsT<T>& params, const MatrixT<T>& inputs,
                            const NeighborTable& neighbors, ForwardCache<T>* cache = nullptr);

/// Gradient of sum(d_out . f) with respect to the flat parameters.
template <class T>
std::vector<T> backward_pointnet(const PointNetParamsT<T>& params, const MatrixT<T>& inputs,
                                 const NeighborTable& neighbors, const ForwardCache<T>& cache,
                                 const MatrixT<T>& d_out);

/// Negative cosine similarity. Zero-norm inputs give 0 and set *degenerate; non-finite
/// inputs give NaN.
double cosine_distance(std::span<const float> f1, std::span<const float> f2, bool* degenerate = nullptr);

struct LossValue {
  double loss = 0.0;
  std::size_t valid_rows = 0;
  std::size_t degenerate_rows = 0;
};

/// Mean of D(learned_i, target_i) over rows with view_count > 0. When grad is given it
/// receives dL/dlearned (zero on masked and degenerate rows). Throws std::invalid_argument
/// if no row is valid or shapes disagree. A non-finite learned or target row makes the loss NaN.
template <class T>
LossValue distill_loss(const MatrixT<T>& learned, const TargetFeatures& target,
                       MatrixT<T>* grad = nullptr);

struct TrainSchedule {
  double lr0 = 0.05;
  double decay = 0.99;
  int decay_every = 1000;
  int steps = 2000;
  int batch_scenes = 1;

  /// lr0 * decay^floor(step / decay_every).
  double lr_at(int step) const;
  void validate() const;
};

struct DistillScene {
  PointCloud cloud;
  TargetFeatures targets;
};

struct LossRecord {
  int step = 0;
  double lr = 0.0;
  double loss = 0.0;
};

struct TrainResult {
  PointNetParams params;
  std::vector<LossRecord> curve;
};

using StepCallback = std::function<void(const LossRecord&)>;

/// Plain SGD (no momentum). Each step averages loss and gradient over batch_scenes
/// scenes taken round-robin. Throws NumericError naming the step on a non-finite loss.
TrainResult train(const std::vector<DistillScene>& scenes, PointNetParams init,
                  const TrainSchedule& schedule, const StepCallback& on_step = {});

/// Network output for a whole cloud.
MatrixT<float> predict_point_features(const PointNetParams& params, const PointCloud& cloud);

void save_pointnet(const std::filesystem::path& dir, const PointNetParams& params);
PointNetParams load_pointnet(const std::filesystem::path& dir);
void write_loss_curve(const std::filesystem::path& path, const std::vector<LossRecord>& curve);

/// Loss and analytic gradient at a parameter vector.
using LossGradFn = std::function<double(std::span<const double> params, std::vector<double>* grad)>;

struct GradientCheck {
  double max_relative_error = 0.0;
  std::vector<std::size_t> probes;
  std::vector<double> analytic;
  std::vector<double> numeric;
};

/// Central differences on n_probes random coordinates drawn from [begin, end) (the whole
/// vector when end == 0); error = |analytic - numeric| / max(|numeric|, 1e-8).
GradientCheck finite_diff_check(std::span<const double> params, const LossGradFn& loss_fn,
                                int n_probes, std::uint64_t seed, double step = 1e-3,
                                std::size_t begin = 0, std::size_t end = 0);

/// finite_diff_check of the distillation loss run on a double-precision copy of the
/// network, probing each parameter tensor separately. Returns tensor name -> max error.
std::map<std::string, double> pointnet_gradient_check(const PointNetParams& params,
                                                      const DistillScene& scene,
                                                      int probes_per_tensor, std::uint64_t seed,
                                                      double step = 1e-3);

}  // namespace fo3d
