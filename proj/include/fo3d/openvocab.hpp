// Text-embedding classification of point features, open-world query masks and
// zero-shot pseudo-labels.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fo3d/matrix.hpp"
#include "fo3d/scene.hpp"
#include "fo3d/tensor.hpp"

namespace fo3d {

/// K class or query embeddings of dimension C.
struct EmbeddingMatrix {
  FeatureMatrix rows;              // K x C
  std::vector<std::string> names;  // K, may be empty
  bool normalized = false;

  int size() const { return static_cast<int>(rows.rows()); }
  int dim() const { return static_cast<int>(rows.cols()); }
};

/// Row k = L2-normalized mean over the P prompt embeddings of class k.
/// prompt_embeddings is K x P x C row-major. Throws DataError naming the class
/// when the mean has zero norm, std::invalid_argument on bad sizes.
EmbeddingMatrix build_class_embeddings(std::span<const float> prompt_embeddings, int k, int p, int c,
                                       std::vector<std::string> names = {});

/// Accepts a [K, C] (one prompt per class) or [K, P, C] f32 tensor.
EmbeddingMatrix build_class_embeddings(const Tensor& t, std::vector<std::string> names = {});

struct Segmentation {
  std::vector<std::int32_t> labels;  // -1 = no prediction
  std::vector<float> scores;         // cosine of the winning class
};

/// Cosine of every (point, class) pair, computed in double. Zero-norm feature rows
/// score 0 against every class.
MatrixT<double> cosine_scores(const FeatureMatrix& features, const EmbeddingMatrix& emb);

/// label = argmax_k cosine over `candidates` (all classes when empty), ties to the
/// smallest class id. Rows with valid[i] == 0 get label -1 and score 0.
/// Throws std::invalid_argument if K == 0, emb is not normalized or dimensions differ.
Segmentation classify_points(const FeatureMatrix& features, const EmbeddingMatrix& emb,
                             std::span<const std::uint8_t> valid = {},
                             std::span<const int> candidates = {});

struct QueryMode {
  std::optional<double> threshold;     // absolute cosine
  std::optional<double> top_fraction;  // share of points kept
};

/// theta mode keeps cosine >= theta; rho mode keeps the round(rho * N) highest cosines
/// (at least one), ties to the lower index. Invalid rows are never selected.
/// Throws std::invalid_argument unless exactly one mode is set or if rho is outside (0, 1].
std::vector<std::uint8_t> open_world_query(const FeatureMatrix& features, std::span<const float> query,
                                           const QueryMode& mode,
                                           std::span<const std::uint8_t> valid = {});

enum class PseudoLabelMode { kRestricted, kFull };

/// Points with a ground-truth label (>= 0) keep it; the others get the argmax over the
/// unseen classes (restricted) or over every class (full). Invalid rows stay -1.
std::vector<std::int32_t> generate_pseudo_labels(const FeatureMatrix& features, const EmbeddingMatrix& emb,
                                                 std::span<const std::int32_t> gt_seen_labels,
                                                 std::span<const int> unseen_class_ids,
                                                 PseudoLabelMode mode = PseudoLabelMode::kRestricted,
                                                 std::span<const std::uint8_t> valid = {});

enum class FrequencyGroup { kNone, kHead, kCommon, kTail };

struct LabelClass {
  std::string name;
  FrequencyGroup group = FrequencyGroup::kNone;
  bool unseen = false;
  bool ignored = false;
};

/// Label-set file, one class per line:
///   name | head|common|tail|- | seen|unseen | ignore
/// Every field after the name is optional; '#' starts a comment. Class ids follow line order.
struct LabelSet {
  std::vector<LabelClass> classes;

  int size() const { return static_cast<int>(classes.size()); }
  std::vector<std::string> names() const;
  std::vector<int> active_ids() const;  // not ignored
  std::vector<int> unseen_ids() const;  // unseen and not ignored
  std::vector<int> seen_ids() const;    // seen and not ignored
  std::vector<int> group_ids(FrequencyGroup g) const;
  /// -1 when missing.
  int index_of(const std::string& name) const;
};

LabelSet parse_label_set(const std::string& text, const std::string& origin = "<string>");
LabelSet read_label_set(const std::filesystem::path& path);

/// Throws ConfigError when the embedding rows do not line up with the label set.
void check_label_set(const LabelSet& labels, const EmbeddingMatrix& emb);

/// Loads an embedding tensor and attaches the label-set names.
EmbeddingMatrix load_class_embeddings(const std::filesystem::path& path, const LabelSet& labels);

/// A single query direction from a [C], [1, C] or [P, C] tensor (prompts averaged).
std::vector<float> load_query_embedding(const std::filesystem::path& path);

/// Fixed color per class id; label -1 maps to gray.
std::array<std::uint8_t, 3> palette_color(std::int32_t label);

/// Cloud colored by label.
void write_labeled_ply(const std::filesystem::path& path, const PointCloud& cloud,
                       std::span<const std::int32_t> labels);

/// Cloud with masked points highlighted in red and the rest dimmed.
void write_mask_ply(const std::filesystem::path& path, const PointCloud& cloud,
                    std::span<const std::uint8_t> mask);

}  // namespace fo3d
