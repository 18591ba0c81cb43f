// Stage orchestration. Every stage reads its inputs from disk and writes its outputs to a
// per-scene work directory:
//
//   <work>/features/<frame id>.fot     f32 [H, W, C] fused pixel features per view
//   <work>/targets/                    target features + view counts per point
//   <out>/pointnet/                    point network bundle, loss_curve.csv
//   <work>/segment/labels.fot          i32 [N], scores.fot f32 [N], segment.ply
//   <work>/query/mask.fot              u8 [N], query.ply
//   <work>/pseudo/labels.fot           i32 [N]
//
// A scene directory may carry labels.fot (i32 [N], -1 = unlabeled) with ground truth.

#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fo3d/distill.hpp"
#include "fo3d/feature_map.hpp"
#include "fo3d/keyvalue.hpp"
#include "fo3d/metrics.hpp"
#include "fo3d/openvocab.hpp"
#include "fo3d/superpixel.hpp"
#include "fo3d/vit.hpp"

namespace fo3d {

struct PipelineConfig {
  std::vector<double> scales = {1.0, 0.5, 0.25};
  double stride_frac = 0.5;
  int n_superpixels = 50;
  double slic_compactness = 10.0;
  int slic_iterations = 10;
  bool normalize_features = true;  // unit-norm local features before fusion
  double depth_tolerance = 0.10;   // meters
  int frame_stride = 10;
  int jobs = 1;

  std::filesystem::path weights;          // encoder bundle directory
  std::filesystem::path embeddings;       // [K, C] or [K, P, C]
  std::filesystem::path label_set;
  std::filesystem::path query_embedding;  // [C] or [P, C]
  std::optional<double> query_threshold;
  double query_top_fraction = 0.05;
  PseudoLabelMode pseudo_mode = PseudoLabelMode::kRestricted;

  int hidden = 64;
  int knn = 16;
  std::uint64_t seed = 0;
  TrainSchedule schedule;

  /// Overrides fields from key = value entries; relative paths resolve against base_dir.
  /// Throws ConfigError on unknown keys or bad values.
  void apply(const KeyValueFile& kv, const std::filesystem::path& base_dir = {});
  static PipelineConfig from_file(const std::filesystem::path& path);
  void validate() const;
  std::string to_text() const;
};

/// Crops -> SLIC -> local-token encoder -> per-pixel fusion for one RGB view.
FeatureMap extract_view_features(const RgbImage& image, const ViTWeights& weights, const PipelineConfig& config);

/// Writes <work>/features/<id>.fot for every selected frame; returns the frame ids.
std::vector<int> cmd_extract(const std::filesystem::path& scene_dir, const std::filesystem::path& work_dir,
                             const PipelineConfig& config);

/// Fuses the cached view features onto the scene's points and writes <work>/targets.
TargetFeatures cmd_project(const std::filesystem::path& scene_dir, const std::filesystem::path& work_dir,
                           const PipelineConfig& config);

struct SceneWork {
  std::filesystem::path scene_dir;
  std::filesystem::path work_dir;
};

/// Trains on every scene's targets; writes <out>/pointnet and <out>/pointnet/loss_curve.csv.
TrainResult cmd_distill(const std::vector<SceneWork>& scenes, const std::filesystem::path& out_dir,
                        const PipelineConfig& config);

/// Point features used by segment / query / pseudo-label: either the projected targets
/// (invalid where no view saw the point) or a trained point network.
struct PointFeatures {
  FeatureMatrix features;
  std::vector<std::uint8_t> valid;
};
PointFeatures load_point_features(const SceneWork& scene, const std::filesystem::path& pointnet_dir = {});

Segmentation cmd_segment(const SceneWork& scene, const PipelineConfig& config,
                         const std::filesystem::path& pointnet_dir = {});
std::vector<std::uint8_t> cmd_query(const SceneWork& scene, const PipelineConfig& config,
                                    const std::filesystem::path& pointnet_dir = {});
/// Ground truth of unseen classes is hidden before labeling.
std::vector<std::int32_t> cmd_pseudo(const SceneWork& scene, const PipelineConfig& config,
                                     const std::filesystem::path& pointnet_dir = {});

/// Confusion matrix over the active classes of the label set, group means, hIoU when the
/// label set has seen and unseen classes. Writes <out_csv> when non-empty.
EvalReport cmd_eval(const std::filesystem::path& prediction, const std::filesystem::path& ground_truth,
                    const PipelineConfig& config, const std::filesystem::path& out_csv = {});

/// Builds the report from label vectors; ignored classes are treated as unlabeled.
EvalReport evaluate_labels(std::span<const std::int32_t> pred, std::span<const std::int32_t> gt, const LabelSet& labels);

}  // namespace fo3d
