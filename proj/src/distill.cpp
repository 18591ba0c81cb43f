#include "fo3d/distill.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>

#include "fo3d/errors.hpp"
#include "fo3d/keyvalue.hpp"
#include "fo3d/log.hpp"
#include "fo3d/tensor.hpp"

namespace fs = std::filesystem;

namespace fo3d {

namespace {

template <class T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

template <class T>
struct Views {
  Eigen::Map<const MatrixT<T>> w1, w2, w3;
  Eigen::Map<const RowVec<T>> b1, b2, b3;
};

template <class T>
Views<T> views_of(const PointNetParamsT<T>& p) {
  const PointNetConfig& c = p.config;
  const ParamLayout l = ParamLayout::of(c);
  if (p.values.size() != l.total) throw std::invalid_argument("point network: parameter count mismatch");
  const T* d = p.values.data();
  return {{d + l.w1, c.hidden, c.in_dim}, {d + l.w2, c.hidden, c.hidden}, {d + l.w3, c.out_dim, c.hidden},
          {d + l.b1, c.hidden},           {d + l.b2, c.hidden},           {d + l.b3, c.out_dim}};
}

void check_config(const PointNetConfig& c) {
  if (c.in_dim < 1 || c.hidden < 1 || c.out_dim < 1 || c.knn < 1) {
    throw ConfigError("point network dimensions must be >= 1");
  }
}

struct Candidate {
  double d2;
  std::int32_t idx;
  bool operator<(const Candidate& o) const { return d2 < o.d2 || (d2 == o.d2 && idx < o.idx); }
};

}  // namespace

ParamLayout ParamLayout::of(const PointNetConfig& c) {
  ParamLayout l{};
  const auto in = static_cast<std::size_t>(c.in_dim);
  const auto h = static_cast<std::size_t>(c.hidden);
  const auto out = static_cast<std::size_t>(c.out_dim);
  l.w1 = 0;
  l.b1 = l.w1 + h * in;
  l.w2 = l.b1 + h;
  l.b2 = l.w2 + h * h;
  l.w3 = l.b2 + h;
  l.b3 = l.w3 + out * h;
  l.total = l.b3 + out;
  return l;
}

std::vector<std::tuple<std::string, std::size_t, std::size_t>> ParamLayout::tensors(
    const PointNetConfig& c) const {
  const auto in = static_cast<std::size_t>(c.in_dim);
  const auto h = static_cast<std::size_t>(c.hidden);
  const auto out = static_cast<std::size_t>(c.out_dim);
  return {{"w1", w1, h * in}, {"b1", b1, h}, {"w2", w2, h * h},
          {"b2", b2, h},      {"w3", w3, out * h}, {"b3", b3, out}};
}

PointNetParams init_pointnet(const PointNetConfig& config, std::uint64_t seed) {
  check_config(config);
  const ParamLayout l = ParamLayout::of(config);
  PointNetParams p{config, std::vector<float>(l.total, 0.0f)};
  std::mt19937_64 rng(seed);
  auto fill = [&](std::size_t offset, int rows, int cols) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / (rows + cols)));
    for (std::size_t i = 0; i < static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols); ++i) {
      p.values[offset + i] = static_cast<float>(dist(rng));
    }
  };
  fill(l.w1, config.hidden, config.in_dim);
  fill(l.w2, config.hidden, config.hidden);
  fill(l.w3, config.out_dim, config.hidden);
  return p;
}

NeighborTable build_knn(const std::vector<Eigen::Vector3f>& positions, int k) {
  if (k < 1) throw std::invalid_argument("build_knn: k must be >= 1");
  const std::size_t n = positions.size();
  NeighborTable table;
  if (n == 0) return table;
  const int kk = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(k), n));
  table.k = kk;
  table.indices.assign(n * static_cast<std::size_t>(kk), 0);

  Eigen::Vector3d lo = positions[0].cast<double>(), hi = lo;
  for (const auto& p : positions) {
    lo = lo.cwiseMin(p.cast<double>());
    hi = hi.cwiseMax(p.cast<double>());
  }
  const Eigen::Vector3d ext = (hi - lo).cwiseMax(1e-9);
  double cell = std::cbrt(ext.prod() * kk / static_cast<double>(n));
  cell = std::max({cell, ext.maxCoeff() / 256.0, 1e-9});
  std::array<int, 3> dims{};
  for (int a = 0; a < 3; ++a) dims[a] = std::max(1, static_cast<int>(std::floor(ext[a] / cell)) + 1);
  auto cell_of = [&](const Eigen::Vector3f& p) {
    std::array<int, 3> c{};
    for (int a = 0; a < 3; ++a) {
      c[a] = std::clamp(static_cast<int>(std::floor((p[a] - lo[a]) / cell)), 0, dims[a] - 1);
    }
    return c;
  };
  auto flat = [&](int x, int y, int z) {
    return (static_cast<std::size_t>(z) * dims[1] + y) * dims[0] + x;
  };

  // counting sort of points into cells
  std::vector<std::size_t> start(static_cast<std::size_t>(dims[0]) * dims[1] * dims[2] + 1, 0);
  std::vector<std::size_t> cell_idx(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = cell_of(positions[i]);
    cell_idx[i] = flat(c[0], c[1], c[2]);
    ++start[cell_idx[i] + 1];
  }
  for (std::size_t i = 1; i < start.size(); ++i) start[i] += start[i - 1];
  std::vector<std::int32_t> members(n);
  {
    std::vector<std::size_t> fill(start.begin(), start.end() - 1);
    for (std::size_t i = 0; i < n; ++i) members[fill[cell_idx[i]]++] = static_cast<std::int32_t>(i);
  }
  const int max_ring = std::max({dims[0], dims[1], dims[2]});

#pragma omp parallel for schedule(dynamic, 64)
  for (std::ptrdiff_t pi = 0; pi < static_cast<std::ptrdiff_t>(n); ++pi) {
    const auto i = static_cast<std::size_t>(pi);
    const Eigen::Vector3d q = positions[i].cast<double>();
    const auto c = cell_of(positions[i]);
    std::vector<Candidate> best;  // max-heap on (d2, idx), size <= kk
    for (int r = 0; r <= max_ring; ++r) {
      for (int z = c[2] - r; z <= c[2] + r; ++z) {
        if (z < 0 || z >= dims[2]) continue;
        for (int y = c[1] - r; y <= c[1] + r; ++y) {
          if (y < 0 || y >= dims[1]) continue;
          for (int x = c[0] - r; x <= c[0] + r; ++x) {
            if (x < 0 || x >= dims[0]) continue;
            const int cheb = std::max({std::abs(x - c[0]), std::abs(y - c[1]), std::abs(z - c[2])});
            if (cheb != r) continue;
            const std::size_t f = flat(x, y, z);
            for (std::size_t m = start[f]; m < start[f + 1]; ++m) {
              const std::int32_t j = members[m];
              const Candidate cand{(positions[static_cast<std::size_t>(j)].cast<double>() - q).squaredNorm(), j};
              if (static_cast<int>(best.size()) < kk) {
                best.push_back(cand);
                std::push_heap(best.begin(), best.end());
              } else if (cand < best.front()) {
                std::pop_heap(best.begin(), best.end());
                best.back() = cand;
                std::push_heap(best.begin(), best.end());
              }
            }
          }
        }
      }
      // every unvisited point is at least r * cell away
      const double bound = r * cell;
      if (static_cast<int>(best.size()) == kk && best.front().d2 < bound * bound) break;
    }
    std::sort_heap(best.begin(), best.end());
    for (int m = 0; m < kk; ++m) table.indices[i * static_cast<std::size_t>(kk) + m] = best[static_cast<std::size_t>(m)].idx;
  }
  return table;
}

MatrixT<float> point_inputs(const PointCloud& cloud) {
  const std::size_t n = cloud.size();
  if (n == 0) throw std::invalid_argument("point_inputs: empty cloud");
  Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
  for (const auto& p : cloud.positions) centroid += p.cast<double>();
  centroid /= static_cast<double>(n);
  MatrixT<float> x(static_cast<Eigen::Index>(n), 6);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    for (int a = 0; a < 3; ++a) x(r, a) = static_cast<float>(cloud.positions[i][a] - centroid[a]);
    for (int a = 0; a < 3; ++a) {
      x(r, 3 + a) = cloud.colors ? (*cloud.colors)[i][a] / 255.0f : 0.5f;
    }
  }
  return x;
}

template <class T>
MatrixT<T> forward_pointnet(const PointNetParamsT<T>& params, const MatrixT<T>& inputs,
                            const NeighborTable& neighbors, ForwardCache<T>* cache) {
  const PointNetConfig& c = params.config;
  const Views<T> w = views_of(params);
  const Eigen::Index n = inputs.rows();
  if (n == 0) throw std::invalid_argument("forward_pointnet: empty cloud");
  if (inputs.cols() != c.in_dim) throw std::invalid_argument("forward_pointnet: input width mismatch");
  const int k = neighbors.k;
  if (k < 1 || neighbors.indices.size() != static_cast<std::size_t>(n) * static_cast<std::size_t>(k)) {
    throw std::invalid_argument("forward_pointnet: neighbor table does not match the cloud");
  }

  ForwardCache<T> local;
  ForwardCache<T>& fc = cache ? *cache : local;
  fc.h1 = ((inputs * w.w1.transpose()).rowwise() + w.b1).array().tanh().matrix();
  fc.pooled.setZero(n, c.hidden);
  const T inv_k = T(1) / static_cast<T>(k);
  for (Eigen::Index i = 0; i < n; ++i) {
    const std::int32_t* nb = neighbors.indices.data() + static_cast<std::size_t>(i) * static_cast<std::size_t>(k);
    for (int m = 0; m < k; ++m) fc.pooled.row(i) += fc.h1.row(nb[m]);
    fc.pooled.row(i) *= inv_k;
  }
  fc.h2 = ((fc.pooled * w.w2.transpose()).rowwise() + w.b2).array().tanh().matrix();
  return (fc.h2 * w.w3.transpose()).rowwise() + w.b3;
}

template <class T>
std::vector<T> backward_pointnet(const PointNetParamsT<T>& params, const MatrixT<T>& inputs,
                                 const NeighborTable& neighbors, const ForwardCache<T>& cache,
                                 const MatrixT<T>& d_out) {
  const PointNetConfig& c = params.config;
  const Views<T> w = views_of(params);
  const ParamLayout l = ParamLayout::of(c);
  const Eigen::Index n = inputs.rows();
  if (d_out.rows() != n || d_out.cols() != c.out_dim) {
    throw std::invalid_argument("backward_pointnet: gradient shape mismatch");
  }
  std::vector<T> grad(l.total, T(0));
  Eigen::Map<MatrixT<T>> gw1(grad.data() + l.w1, c.hidden, c.in_dim);
  Eigen::Map<MatrixT<T>> gw2(grad.data() + l.w2, c.hidden, c.hidden);
  Eigen::Map<MatrixT<T>> gw3(grad.data() + l.w3, c.out_dim, c.hidden);
  Eigen::Map<RowVec<T>> gb1(grad.data() + l.b1, c.hidden);
  Eigen::Map<RowVec<T>> gb2(grad.data() + l.b2, c.hidden);
  Eigen::Map<RowVec<T>> gb3(grad.data() + l.b3, c.out_dim);

  gw3.noalias() = d_out.transpose() * cache.h2;
  gb3 = d_out.colwise().sum();
  const MatrixT<T> d_a2 = ((d_out * w.w3).array() * (T(1) - cache.h2.array().square())).matrix();
  gw2.noalias() = d_a2.transpose() * cache.pooled;
  gb2 = d_a2.colwise().sum();
  const MatrixT<T> d_pooled = d_a2 * w.w2;

  const int k = neighbors.k;
  const T inv_k = T(1) / static_cast<T>(k);
  MatrixT<T> d_h1 = MatrixT<T>::Zero(n, c.hidden);
  for (Eigen::Index i = 0; i < n; ++i) {
    const std::int32_t* nb = neighbors.indices.data() + static_cast<std::size_t>(i) * static_cast<std::size_t>(k);
    for (int m = 0; m < k; ++m) d_h1.row(nb[m]) += inv_k * d_pooled.row(i);
  }
  const MatrixT<T> d_a1 = (d_h1.array() * (T(1) - cache.h1.array().square())).matrix();
  gw1.noalias() = d_a1.transpose() * inputs;
  gb1 = d_a1.colwise().sum();
  return grad;
}

double cosine_distance(std::span<const float> f1, std::span<const float> f2, bool* degenerate) {
  if (f1.size() != f2.size()) throw std::invalid_argument("cosine_distance: length mismatch");
  double dot = 0.0, n1 = 0.0, n2 = 0.0;
  for (std::size_t i = 0; i < f1.size(); ++i) {
    dot += static_cast<double>(f1[i]) * f2[i];
    n1 += static_cast<double>(f1[i]) * f1[i];
    n2 += static_cast<double>(f2[i]) * f2[i];
  }
  n1 = std::sqrt(n1);
  n2 = std::sqrt(n2);
  if (!std::isfinite(n1) || !std::isfinite(n2)) return std::numeric_limits<double>::quiet_NaN();
  const bool bad = n1 <= kDegenerateNorm || n2 <= kDegenerateNorm;
  if (degenerate) *degenerate = bad;
  if (bad) return 0.0;
  return std::clamp(-dot / (n1 * n2), -1.0, 1.0);
}

template <class T>
LossValue distill_loss(const MatrixT<T>& learned, const TargetFeatures& target, MatrixT<T>* grad) {
  const auto n = static_cast<std::size_t>(learned.rows());
  if (n != target.size() || learned.cols() != target.channels) {
    throw std::invalid_argument("distill_loss: learned features do not match target shape");
  }
  LossValue out;
  out.valid_rows = target.valid_count();
  if (out.valid_rows == 0) throw std::invalid_argument("distill_loss: no valid target rows");
  if (grad) grad->setZero(learned.rows(), learned.cols());
  const double inv_nv = 1.0 / static_cast<double>(out.valid_rows);
  const Eigen::Index c = learned.cols();
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!target.valid(i)) continue;
    const auto r = static_cast<Eigen::Index>(i);
    const auto t = target.row(i);
    double dot = 0.0, no = 0.0, nt = 0.0;
    for (Eigen::Index j = 0; j < c; ++j) {
      const double o = static_cast<double>(learned(r, j));
      const double tv = t[static_cast<std::size_t>(j)];
      dot += o * tv;
      no += o * o;
      nt += tv * tv;
    }
    no = std::sqrt(no);
    nt = std::sqrt(nt);
    if (!std::isfinite(no) || !std::isfinite(nt)) {
      // non-finite rows poison the loss so the trainer stops instead of scoring them 0
      sum = std::numeric_limits<double>::quiet_NaN();
      continue;
    }
    if (no <= kDegenerateNorm || nt <= kDegenerateNorm) {
      ++out.degenerate_rows;
      continue;
    }
    const double cos = dot / (no * nt);
    sum += -cos;
    if (grad) {
      // d(-cos)/do = -(t / (|o||t|) - cos * o / |o|^2)
      for (Eigen::Index j = 0; j < c; ++j) {
        const double o = static_cast<double>(learned(r, j));
        const double tv = t[static_cast<std::size_t>(j)];
        (*grad)(r, j) = static_cast<T>(-(tv / (no * nt) - cos * o / (no * no)) * inv_nv);
      }
    }
  }
  out.loss = sum * inv_nv;
  return out;
}

double TrainSchedule::lr_at(int step) const {
  if (step < 0) throw std::invalid_argument("lr_at: negative step");
  // repeated multiplication, so lr_at matches the trainer's running value bit for bit
  double lr = lr0;
  for (int i = 0; i < step / decay_every; ++i) lr *= decay;
  return lr;
}

void TrainSchedule::validate() const {
  if (!(lr0 >= 0.0) || !std::isfinite(lr0)) throw ConfigError("schedule: lr0 must be finite and >= 0");
  if (!(decay > 0.0 && decay <= 1.0)) throw ConfigError("schedule: decay must be in (0, 1]");
  if (decay_every < 1) throw ConfigError("schedule: decay_every must be >= 1");
  if (steps < 0) throw ConfigError("schedule: steps must be >= 0");
  if (batch_scenes < 1) throw ConfigError("schedule: batch_scenes must be >= 1");
}

TrainResult train(const std::vector<DistillScene>& scenes, PointNetParams init,
                  const TrainSchedule& schedule, const StepCallback& on_step) {
  schedule.validate();
  check_config(init.config);
  if (scenes.empty()) throw std::invalid_argument("train: no scenes");
  const PointNetConfig& c = init.config;
  if (init.values.size() != ParamLayout::of(c).total) throw std::invalid_argument("train: parameter count mismatch");

  struct Prepared {
    MatrixT<float> inputs;
    NeighborTable neighbors;
    const TargetFeatures* targets;
  };
  std::vector<Prepared> prepared;
  std::size_t degenerate_reported = 0;
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    const DistillScene& sc = scenes[s];
    if (sc.targets.size() != sc.cloud.size()) {
      throw DataError("train: scene " + std::to_string(s) + " has " + std::to_string(sc.cloud.size()) +
                      " points but " + std::to_string(sc.targets.size()) + " targets");
    }
    if (sc.targets.channels != c.out_dim) {
      throw ConfigError("train: target dim " + std::to_string(sc.targets.channels) +
                        " != network output dim " + std::to_string(c.out_dim));
    }
    prepared.push_back({point_inputs(sc.cloud), build_knn(sc.cloud.positions, c.knn), &sc.targets});
  }

  TrainResult result{std::move(init), {}};
  std::vector<float>& theta = result.params.values;
  std::vector<float> grad(theta.size());
  const std::size_t batch = static_cast<std::size_t>(schedule.batch_scenes);
  double lr = schedule.lr0;
  ForwardCache<float> cache;
  MatrixT<float> d_out;
  for (int step = 0; step < schedule.steps; ++step) {
    if (step > 0 && step % schedule.decay_every == 0) lr *= schedule.decay;
    std::fill(grad.begin(), grad.end(), 0.0f);
    double loss = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      const Prepared& p = prepared[(static_cast<std::size_t>(step) * batch + b) % prepared.size()];
      const MatrixT<float> out = forward_pointnet(result.params, p.inputs, p.neighbors, &cache);
      const LossValue lv = distill_loss(out, *p.targets, &d_out);
      if (lv.degenerate_rows > degenerate_reported) {
        degenerate_reported = lv.degenerate_rows;
        log_warning("distill: " + std::to_string(lv.degenerate_rows) + " zero-norm rows scored as 0 at step " +
                    std::to_string(step));
      }
      const std::vector<float> g = backward_pointnet(result.params, p.inputs, p.neighbors, cache, d_out);
      for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += g[i] / static_cast<float>(batch);
      loss += lv.loss / static_cast<double>(batch);
    }
    if (!std::isfinite(loss)) {
      throw NumericError("distill: non-finite loss at step " + std::to_string(step));
    }
    const LossRecord rec{step, lr, loss};
    result.curve.push_back(rec);
    if (on_step) on_step(rec);
    const auto flr = static_cast<float>(lr);
    for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= flr * grad[i];
  }
  return result;
}

MatrixT<float> predict_point_features(const PointNetParams& params, const PointCloud& cloud) {
  return forward_pointnet(params, point_inputs(cloud), build_knn(cloud.positions, params.config.knn));
}

void save_pointnet(const fs::path& dir, const PointNetParams& params) {
  const PointNetConfig& c = params.config;
  const ParamLayout l = ParamLayout::of(c);
  if (params.values.size() != l.total) throw std::invalid_argument("save_pointnet: parameter count mismatch");
  fs::create_directories(dir);
  std::ostringstream manifest;
  manifest << "# point network parameters\n"
           << "format = fo3d-pointnet-1\n"
           << "in_dim = " << c.in_dim << "\n"
           << "hidden = " << c.hidden << "\n"
           << "out_dim = " << c.out_dim << "\n"
           << "knn = " << c.knn << "\n"
           << "parameter_count = " << l.total << "\n";
  const auto h = static_cast<std::size_t>(c.hidden);
  const std::map<std::string, Shape> shapes = {
      {"w1", {h, static_cast<std::size_t>(c.in_dim)}}, {"b1", {h}}, {"w2", {h, h}}, {"b2", {h}},
      {"w3", {static_cast<std::size_t>(c.out_dim), h}}, {"b3", {static_cast<std::size_t>(c.out_dim)}}};
  for (const auto& [name, offset, size] : l.tensors(c)) {
    std::vector<float> v(params.values.begin() + static_cast<std::ptrdiff_t>(offset),
                         params.values.begin() + static_cast<std::ptrdiff_t>(offset + size));
    write_tensor(dir / (name + ".fot"), Tensor::from<float>(shapes.at(name), std::move(v)));
    manifest << "tensor." << name << " = " << name << ".fot\n";
  }
  std::ofstream out(dir / "manifest.txt");
  out << manifest.str();
  if (!out) throw std::runtime_error("cannot write " + (dir / "manifest.txt").string());
}

PointNetParams load_pointnet(const fs::path& dir) {
  const KeyValueFile m = KeyValueFile::read(dir / "manifest.txt");
  if (m.get_string("format") != "fo3d-pointnet-1") {
    throw ConfigError(dir.string() + ": unsupported point network format '" + m.get_string("format") + "'");
  }
  PointNetConfig c;
  c.in_dim = m.get_int("in_dim");
  c.hidden = m.get_int("hidden");
  c.out_dim = m.get_int("out_dim");
  c.knn = m.get_int("knn");
  check_config(c);
  const ParamLayout l = ParamLayout::of(c);
  PointNetParams p{c, std::vector<float>(l.total)};
  for (const auto& [name, offset, size] : l.tensors(c)) {
    const std::string file = m.has("tensor." + name) ? m.get_string("tensor." + name) : name + ".fot";
    const bool matrix = name[0] == 'w';
    const Tensor t = read_tensor_as(dir / file, DType::kF32, matrix ? 2 : 1);
    if (t.numel() != size) {
      throw FormatError(dir.string() + ": tensor " + name + " has " + std::to_string(t.numel()) +
                        " values, expected " + std::to_string(size));
    }
    std::copy(t.values<float>().begin(), t.values<float>().end(),
              p.values.begin() + static_cast<std::ptrdiff_t>(offset));
  }
  return p;
}

void write_loss_curve(const fs::path& path, const std::vector<LossRecord>& curve) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.precision(10);
  out << "step,lr,loss\n";
  for (const auto& r : curve) out << r.step << "," << r.lr << "," << r.loss << "\n";
}

GradientCheck finite_diff_check(std::span<const double> params, const LossGradFn& loss_fn, int n_probes,
                                std::uint64_t seed, double step, std::size_t begin, std::size_t end) {
  if (end == 0) end = params.size();
  if (begin >= end || end > params.size()) throw std::invalid_argument("finite_diff_check: empty probe range");
  if (n_probes < 1) throw std::invalid_argument("finite_diff_check: n_probes must be >= 1");
  std::vector<double> analytic_grad;
  loss_fn(params, &analytic_grad);
  if (analytic_grad.size() != params.size()) throw std::invalid_argument("finite_diff_check: gradient size mismatch");

  GradientCheck out;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(begin, end - 1);
  std::vector<double> shadow(params.begin(), params.end());
  for (int p = 0; p < n_probes; ++p) {
    const std::size_t i = pick(rng);
    const double saved = shadow[i];
    shadow[i] = saved + step;
    const double up = loss_fn(shadow, nullptr);
    shadow[i] = saved - step;
    const double down = loss_fn(shadow, nullptr);
    shadow[i] = saved;
    const double numeric = (up - down) / (2.0 * step);
    const double err = std::abs(analytic_grad[i] - numeric) / std::max(std::abs(numeric), 1e-8);
    out.max_relative_error = std::max(out.max_relative_error, err);
    out.probes.push_back(i);
    out.analytic.push_back(analytic_grad[i]);
    out.numeric.push_back(numeric);
  }
  return out;
}

std::map<std::string, double> pointnet_gradient_check(const PointNetParams& params, const DistillScene& scene,
                                                      int probes_per_tensor, std::uint64_t seed, double step) {
  const PointNetConfig& c = params.config;
  const MatrixT<double> inputs = point_inputs(scene.cloud).cast<double>();
  const NeighborTable nb = build_knn(scene.cloud.positions, c.knn);
  auto fn = [&](std::span<const double> theta, std::vector<double>* grad) {
    PointNetParamsT<double> p{c, std::vector<double>(theta.begin(), theta.end())};
    ForwardCache<double> cache;
    const MatrixT<double> out = forward_pointnet(p, inputs, nb, &cache);
    MatrixT<double> d_out;
    const LossValue lv = distill_loss(out, scene.targets, grad ? &d_out : nullptr);
    if (grad) *grad = backward_pointnet(p, inputs, nb, cache, d_out);
    return lv.loss;
  };
  const std::vector<double> theta(params.values.begin(), params.values.end());
  std::map<std::string, double> out;
  const ParamLayout l = ParamLayout::of(c);
  std::uint64_t s = seed;
  for (const auto& [name, offset, size] : l.tensors(c)) {
    out[name] = finite_diff_check(theta, fn, probes_per_tensor, s++, step, offset, offset + size).max_relative_error;
  }
  return out;
}

template MatrixT<float> forward_pointnet(const PointNetParamsT<float>&, const MatrixT<float>&,
                                         const NeighborTable&, ForwardCache<float>*);
template MatrixT<double> forward_pointnet(const PointNetParamsT<double>&, const MatrixT<double>&,
                                          const NeighborTable&, ForwardCache<double>*);
template std::vector<float> backward_pointnet(const PointNetParamsT<float>&, const MatrixT<float>&,
                                              const NeighborTable&, const ForwardCache<float>&,
                                              const MatrixT<float>&);
template std::vector<double> backward_pointnet(const PointNetParamsT<double>&, const MatrixT<double>&,
                                               const NeighborTable&, const ForwardCache<double>&,
                                               const MatrixT<double>&);
template LossValue distill_loss(const MatrixT<float>&, const TargetFeatures&, MatrixT<float>*);
template LossValue distill_loss(const MatrixT<double>&, const TargetFeatures&, MatrixT<double>*);

}  // namespace fo3d
