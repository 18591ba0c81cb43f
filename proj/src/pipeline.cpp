#include "fo3d/pipeline.hpp"

#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <sstream>

#include "fo3d/errors.hpp"
#include "fo3d/log.hpp"
#include "fo3d/projection.hpp"
#include "fo3d/regions.hpp"
#include "fo3d/tensor.hpp"

namespace fs = std::filesystem;

namespace fo3d {

namespace {

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config key '" + key + "': expected true or false, got '" + v + "'");
}

fs::path resolve(const fs::path& base, const std::string& v) {
  const fs::path p(v);
  return p.is_relative() && !base.empty() ? base / p : p;
}

std::string join_numbers(const std::vector<double>& v) {
  std::ostringstream os;
  os.precision(12);
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? " " : "") << v[i];
  return os.str();
}

std::vector<std::int32_t> read_labels(const fs::path& path) {
  const Tensor t = read_tensor_as(path, DType::kI32, 1);
  return {t.values<std::int32_t>().begin(), t.values<std::int32_t>().end()};
}

void require_path(const fs::path& p, const char* key) {
  if (p.empty()) throw ConfigError(std::string("config key '") + key + "' is not set");
  if (!fs::exists(p)) throw ConfigError(std::string("config key '") + key + "': " + p.string() + " does not exist");
}

std::vector<int> selected_frames(const fs::path& scene_dir, const PipelineConfig& config) {
  const std::vector<int> ids = subsample_frames(list_frame_ids(scene_dir), config.frame_stride);
  if (ids.empty()) throw LoadError(scene_dir.string() + ": no frames found under depth/");
  return ids;
}

EmbeddingMatrix class_embeddings(const PipelineConfig& config, LabelSet* labels_out) {
  require_path(config.label_set, "label_set");
  require_path(config.embeddings, "embeddings");
  LabelSet labels = read_label_set(config.label_set);
  EmbeddingMatrix emb = load_class_embeddings(config.embeddings, labels);
  if (labels_out) *labels_out = std::move(labels);
  return emb;
}

void check_feature_dim(const PointFeatures& pf, int dim, const char* what) {
  if (pf.features.cols() != dim) {
    throw ConfigError(std::string(what) + " dim " + std::to_string(dim) + " differs from point feature dim " +
                      std::to_string(pf.features.cols()));
  }
}

}  // namespace

void PipelineConfig::apply(const KeyValueFile& kv, const fs::path& base_dir) {
  for (const auto& [key, value] : kv.entries()) {
    if (key == "scales") scales = kv.get_doubles(key);
    else if (key == "stride_frac") stride_frac = kv.get_doubles(key).at(0);
    else if (key == "n_superpixels") n_superpixels = kv.get_int(key);
    else if (key == "slic_compactness") slic_compactness = kv.get_double(key);
    else if (key == "slic_iterations") slic_iterations = kv.get_int(key);
    else if (key == "normalize_features") normalize_features = parse_bool(key, value);
    else if (key == "depth_tolerance") depth_tolerance = kv.get_double(key);
    else if (key == "frame_stride") frame_stride = kv.get_int(key);
    else if (key == "jobs") jobs = kv.get_int(key);
    else if (key == "weights") weights = resolve(base_dir, value);
    else if (key == "embeddings") embeddings = resolve(base_dir, value);
    else if (key == "label_set") label_set = resolve(base_dir, value);
    else if (key == "query_embedding") query_embedding = resolve(base_dir, value);
    else if (key == "query_threshold") {
      if (value.empty() || value == "none") query_threshold.reset();
      else query_threshold = kv.get_double(key);
    }
    else if (key == "query_top_fraction") query_top_fraction = kv.get_doubles(key).at(0);
    else if (key == "pseudo_mode") {
      if (value == "restricted") pseudo_mode = PseudoLabelMode::kRestricted;
      else if (value == "full") pseudo_mode = PseudoLabelMode::kFull;
      else throw ConfigError("config key 'pseudo_mode': expected restricted or full, got '" + value + "'");
    }
    else if (key == "hidden") hidden = kv.get_int(key);
    else if (key == "knn") knn = kv.get_int(key);
    else if (key == "seed") seed = static_cast<std::uint64_t>(kv.get_int(key));
    else if (key == "lr0") schedule.lr0 = kv.get_double(key);
    else if (key == "lr_decay") schedule.decay = kv.get_double(key);
    else if (key == "decay_every") schedule.decay_every = kv.get_int(key);
    else if (key == "steps") schedule.steps = kv.get_int(key);
    else if (key == "batch_scenes") schedule.batch_scenes = kv.get_int(key);
    else throw ConfigError(kv.origin() + ": unknown config key '" + key + "'");
  }
}

PipelineConfig PipelineConfig::from_file(const fs::path& path) {
  PipelineConfig c;
  c.apply(KeyValueFile::read(path), path.parent_path());
  c.validate();
  return c;
}

void PipelineConfig::validate() const {
  if (scales.empty()) throw ConfigError("scales must not be empty");
  for (double s : scales) {
    if (!(s > 0.0 && s <= 1.0)) throw ConfigError("every scale must be in (0, 1]");
  }
  if (!(stride_frac > 0.0 && stride_frac <= 1.0)) throw ConfigError("stride_frac must be in (0, 1]");
  if (n_superpixels < 1) throw ConfigError("n_superpixels must be >= 1");
  if (!(slic_compactness > 0.0)) throw ConfigError("slic_compactness must be > 0");
  if (slic_iterations < 1) throw ConfigError("slic_iterations must be >= 1");
  if (!(depth_tolerance > 0.0)) throw ConfigError("depth_tolerance must be > 0");
  if (frame_stride < 1) throw ConfigError("frame_stride must be >= 1");
  if (jobs < 1) throw ConfigError("jobs must be >= 1");
  if (!(query_top_fraction > 0.0 && query_top_fraction <= 1.0)) throw ConfigError("query_top_fraction must be in (0, 1]");
  if (hidden < 1 || knn < 1) throw ConfigError("hidden and knn must be >= 1");
  schedule.validate();
}

std::string PipelineConfig::to_text() const {
  std::ostringstream os;
  os.precision(12);
  os << "scales = " << join_numbers(scales) << "\n"
     << "stride_frac = " << stride_frac << "\n"
     << "n_superpixels = " << n_superpixels << "\n"
     << "slic_compactness = " << slic_compactness << "\n"
     << "slic_iterations = " << slic_iterations << "\n"
     << "normalize_features = " << (normalize_features ? "true" : "false") << "\n"
     << "depth_tolerance = " << depth_tolerance << "\n"
     << "frame_stride = " << frame_stride << "\n"
     << "jobs = " << jobs << "\n"
     << "weights = " << weights.string() << "\n"
     << "embeddings = " << embeddings.string() << "\n"
     << "label_set = " << label_set.string() << "\n"
     << "query_embedding = " << query_embedding.string() << "\n"
     << "query_threshold = " << (query_threshold ? std::to_string(*query_threshold) : std::string("none")) << "\n"
     << "query_top_fraction = " << query_top_fraction << "\n"
     << "pseudo_mode = " << (pseudo_mode == PseudoLabelMode::kRestricted ? "restricted" : "full") << "\n"
     << "hidden = " << hidden << "\n"
     << "knn = " << knn << "\n"
     << "seed = " << seed << "\n"
     << "lr0 = " << schedule.lr0 << "\n"
     << "lr_decay = " << schedule.decay << "\n"
     << "decay_every = " << schedule.decay_every << "\n"
     << "steps = " << schedule.steps << "\n"
     << "batch_scenes = " << schedule.batch_scenes << "\n";
  return os.str();
}

FeatureMap extract_view_features(const RgbImage& image, const ViTWeights& weights, const PipelineConfig& config) {
  const std::vector<CropSpec> crops = generate_crops(image.width, image.height, config.scales, config.stride_frac);
  if (crops.empty()) throw ConfigError("no crop scale fits a " + std::to_string(image.width) + "x" +
                                       std::to_string(image.height) + " view");
  const SlicParams slic_params{config.n_superpixels, config.slic_compactness, config.slic_iterations};
  FusionAccumulator acc(image.width, image.height, weights.config.embed_dim);
  for (const CropSpec& crop : crops) {
    const RgbImage patch = image.crop(crop.rect.x0, crop.rect.y0, crop.rect.w, crop.rect.h);
    const SuperpixelMap sp = slic(patch, slic_params);
    LocalFeatures lf = forward_with_local_tokens(patch, sp, weights);
    if (config.normalize_features) {
      for (Eigen::Index j = 0; j < lf.superpixel.rows(); ++j) {
        const float n = lf.superpixel.row(j).norm();
        if (n > 0.0f) lf.superpixel.row(j) /= n;
      }
    }
    acc.add_segments(crop, sp, {lf.superpixel.data(), static_cast<std::size_t>(lf.superpixel.size())});
  }
  return acc.finalize();
}

std::vector<int> cmd_extract(const fs::path& scene_dir, const fs::path& work_dir, const PipelineConfig& config) {
  config.validate();
  require_path(config.weights, "weights");
  const ViTWeights weights = load_vit_bundle(config.weights);
  const std::vector<int> ids = selected_frames(scene_dir, config);
  fs::create_directories(work_dir / "features");

  std::exception_ptr error;
  std::mutex error_mu;
  std::atomic<int> done{0};
#pragma omp parallel for num_threads(config.jobs) schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(ids.size()); ++i) {
    try {
      const int id = ids[static_cast<std::size_t>(i)];
      const Frame frame = load_frame(scene_dir, id);
      const FeatureMap fm = extract_view_features(frame.image, weights, config);
      write_tensor(work_dir / "features" / (std::to_string(id) + ".fot"), fm.to_tensor());
      log_info("extract: view " + std::to_string(id) + " (" + std::to_string(++done) + "/" +
               std::to_string(ids.size()) + ")");
    } catch (...) {
      std::lock_guard<std::mutex> lock(error_mu);
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
  return ids;
}

TargetFeatures cmd_project(const fs::path& scene_dir, const fs::path& work_dir, const PipelineConfig& config) {
  config.validate();
  const PointCloud cloud = read_ply(find_point_cloud(scene_dir));
  const std::vector<int> ids = selected_frames(scene_dir, config);
  std::optional<MultiViewAccumulator> acc;
  for (int id : ids) {
    const fs::path fpath = work_dir / "features" / (std::to_string(id) + ".fot");
    if (!fs::exists(fpath)) throw LoadError(fpath.string() + " is missing; run extract first");
    const Frame frame = load_frame(scene_dir, id);
    ViewFeatures view{id, frame.pose, frame.intrinsics, frame.depth, FeatureMap::from_tensor(read_tensor(fpath))};
    if (!acc) acc.emplace(cloud, view.features.channels, config.depth_tolerance);
    acc->add(view);
  }
  TargetFeatures t = acc->finalize();
  save_target_features(work_dir / "targets", t);
  log_info("project: " + std::to_string(t.valid_count()) + " of " + std::to_string(t.size()) +
           " points received features from " + std::to_string(ids.size()) + " views");
  return t;
}

TrainResult cmd_distill(const std::vector<SceneWork>& scenes, const fs::path& out_dir, const PipelineConfig& config) {
  config.validate();
  if (scenes.empty()) throw ConfigError("distill: no scenes given");
  std::vector<DistillScene> data;
  for (const SceneWork& s : scenes) {
    data.push_back({read_ply(find_point_cloud(s.scene_dir)), load_target_features(s.work_dir / "targets")});
  }
  const PointNetConfig pc{6, config.hidden, data.front().targets.channels, config.knn};
  PointNetParams init = init_pointnet(pc, config.seed);
  log_info("distill: " + std::to_string(init.parameter_count()) + " parameters, " +
           std::to_string(config.schedule.steps) + " steps");
  const int every = std::max(1, config.schedule.steps / 10);
  TrainResult result = train(data, std::move(init), config.schedule, [&](const LossRecord& r) {
    if (r.step % every == 0 || r.step + 1 == config.schedule.steps) {
      std::ostringstream os;
      os << "distill: step " << r.step << " lr " << r.lr << " loss " << r.loss;
      log_info(os.str());
    }
  });
  save_pointnet(out_dir / "pointnet", result.params);
  write_loss_curve(out_dir / "pointnet" / "loss_curve.csv", result.curve);
  return result;
}

PointFeatures load_point_features(const SceneWork& scene, const fs::path& pointnet_dir) {
  PointFeatures pf;
  if (!pointnet_dir.empty()) {
    const PointNetParams params = load_pointnet(pointnet_dir);
    const PointCloud cloud = read_ply(find_point_cloud(scene.scene_dir));
    pf.features = predict_point_features(params, cloud);
    pf.valid.assign(cloud.size(), 1);
    return pf;
  }
  const TargetFeatures t = load_target_features(scene.work_dir / "targets");
  pf.features = Eigen::Map<const FeatureMatrix>(t.features.data(), static_cast<Eigen::Index>(t.size()), t.channels);
  pf.valid.resize(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) pf.valid[i] = t.valid(i) ? 1 : 0;
  return pf;
}

Segmentation cmd_segment(const SceneWork& scene, const PipelineConfig& config, const fs::path& pointnet_dir) {
  LabelSet labels;
  const EmbeddingMatrix emb = class_embeddings(config, &labels);
  const PointFeatures pf = load_point_features(scene, pointnet_dir);
  check_feature_dim(pf, emb.dim(), "class embedding");
  const std::vector<int> active = labels.active_ids();
  if (active.empty()) throw ConfigError("label set ignores every class");
  Segmentation seg = classify_points(pf.features, emb, pf.valid, active);

  const fs::path out = scene.work_dir / "segment";
  fs::create_directories(out);
  write_tensor(out / "labels.fot", Tensor::from<std::int32_t>({seg.labels.size()}, seg.labels));
  write_tensor(out / "scores.fot", Tensor::from<float>({seg.scores.size()}, seg.scores));
  write_labeled_ply(out / "segment.ply", read_ply(find_point_cloud(scene.scene_dir)), seg.labels);
  return seg;
}

std::vector<std::uint8_t> cmd_query(const SceneWork& scene, const PipelineConfig& config, const fs::path& pointnet_dir) {
  require_path(config.query_embedding, "query_embedding");
  const std::vector<float> query = load_query_embedding(config.query_embedding);
  const PointFeatures pf = load_point_features(scene, pointnet_dir);
  check_feature_dim(pf, static_cast<int>(query.size()), "query embedding");
  QueryMode mode;
  if (config.query_threshold) mode.threshold = config.query_threshold;
  else mode.top_fraction = config.query_top_fraction;
  std::vector<std::uint8_t> mask = open_world_query(pf.features, query, mode, pf.valid);

  const fs::path out = scene.work_dir / "query";
  fs::create_directories(out);
  write_tensor(out / "mask.fot", Tensor::from<std::uint8_t>({mask.size()}, mask));
  write_mask_ply(out / "query.ply", read_ply(find_point_cloud(scene.scene_dir)), mask);
  return mask;
}

std::vector<std::int32_t> cmd_pseudo(const SceneWork& scene, const PipelineConfig& config, const fs::path& pointnet_dir) {
  LabelSet labels;
  const EmbeddingMatrix emb = class_embeddings(config, &labels);
  const PointFeatures pf = load_point_features(scene, pointnet_dir);
  check_feature_dim(pf, emb.dim(), "class embedding");
  const fs::path gt_path = scene.scene_dir / "labels.fot";
  if (!fs::exists(gt_path)) throw LoadError(gt_path.string() + " is missing; pseudo-labeling needs seen labels");
  std::vector<std::int32_t> gt = read_labels(gt_path);
  if (gt.size() != pf.valid.size()) throw DataError("labels.fot length differs from the point cloud");
  for (auto& g : gt) {
    if (g >= labels.size()) throw DataError("labels.fot holds class id " + std::to_string(g) + " outside the label set");
    if (g >= 0) {
      const LabelClass& c = labels.classes[static_cast<std::size_t>(g)];
      if (c.unseen || c.ignored) g = -1;
    }
  }
  const std::vector<int> unseen = labels.unseen_ids();
  std::vector<std::int32_t> out = generate_pseudo_labels(pf.features, emb, gt, unseen, config.pseudo_mode, pf.valid);

  const fs::path dir = scene.work_dir / "pseudo";
  fs::create_directories(dir);
  write_tensor(dir / "labels.fot", Tensor::from<std::int32_t>({out.size()}, out));
  return out;
}

EvalReport evaluate_labels(std::span<const std::int32_t> pred, std::span<const std::int32_t> gt, const LabelSet& labels) {
  if (pred.size() != gt.size()) throw DataError("prediction and ground truth lengths differ");
  const int k = labels.size();
  std::vector<std::int32_t> p(pred.begin(), pred.end()), g(gt.begin(), gt.end());
  auto ignored = [&](std::int32_t c) { return c >= 0 && c < k && labels.classes[static_cast<std::size_t>(c)].ignored; };
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (ignored(g[i])) g[i] = -1;
    if (ignored(p[i])) p[i] = -1;
  }
  EvalReport r;
  r.class_names = labels.names();
  const ConfusionMatrix cm = accumulate(p, g, k);
  r.points = cm.total();
  r.scores = miou_macc(cm);
  for (std::size_t c = 0; c < r.scores.present.size(); ++c) {
    if (labels.classes[c].ignored) r.scores.present[c] = false;
  }
  const std::vector<int> active = labels.active_ids();
  r.scores.miou = mean_over(r.scores.iou, r.scores.present, active);
  r.scores.macc = mean_over(r.scores.acc, r.scores.present, active);

  auto add_group = [&](const std::string& name, const std::vector<int>& ids) {
    if (ids.empty()) return;
    r.groups.push_back({name, mean_over(r.scores.iou, r.scores.present, ids),
                        mean_over(r.scores.acc, r.scores.present, ids)});
  };
  add_group("head", labels.group_ids(FrequencyGroup::kHead));
  add_group("common", labels.group_ids(FrequencyGroup::kCommon));
  add_group("tail", labels.group_ids(FrequencyGroup::kTail));
  const std::vector<int> seen = labels.seen_ids(), unseen = labels.unseen_ids();
  if (!unseen.empty() && !seen.empty()) {
    add_group("seen", seen);
    add_group("unseen", unseen);
    const double s = r.groups[r.groups.size() - 2].miou, u = r.groups.back().miou;
    if (!std::isnan(s) && !std::isnan(u)) {
      r.has_hiou = true;
      r.hiou_value = hiou(s, u);
    }
  }
  return r;
}

EvalReport cmd_eval(const fs::path& prediction, const fs::path& ground_truth, const PipelineConfig& config,
                    const fs::path& out_csv) {
  require_path(config.label_set, "label_set");
  const LabelSet labels = read_label_set(config.label_set);
  const std::vector<std::int32_t> pred = read_labels(prediction);
  const std::vector<std::int32_t> gt = read_labels(ground_truth);
  for (std::int32_t v : pred) {
    if (v < -1 || v >= labels.size()) throw DataError("prediction holds class id " + std::to_string(v) + " outside the label set");
  }
  for (std::int32_t v : gt) {
    if (v < -1 || v >= labels.size()) throw DataError("ground truth holds class id " + std::to_string(v) + " outside the label set");
  }
  EvalReport r = evaluate_labels(pred, gt, labels);
  if (!out_csv.empty()) write_report_csv(out_csv, r);
  return r;
}

}  // namespace fo3d
