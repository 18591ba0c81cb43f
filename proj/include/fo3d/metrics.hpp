// Semantic segmentation metrics: confusion matrix, per-class IoU / accuracy, harmonic
// IoU of seen and unseen means, and frequency-based class groups.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace fo3d {

/// Rows are ground truth, columns predictions. Points whose ground truth is -1 are
/// skipped. A prediction of -1 on a labeled point is a miss: it counts against the
/// ground-truth class (false negative) without crediting any column.
class ConfusionMatrix {
 public:
  ConfusionMatrix() = default;
  explicit ConfusionMatrix(int classes);

  int classes() const { return k_; }
  std::uint64_t at(int gt, int pred) const { return counts_[static_cast<std::size_t>(gt) * k_ + pred]; }
  std::uint64_t missed(int gt) const { return missed_[static_cast<std::size_t>(gt)]; }
  std::uint64_t total() const;
  std::uint64_t gt_count(int k) const;    // row sum + misses
  std::uint64_t pred_count(int k) const;  // column sum

  /// Throws std::invalid_argument on length mismatch, gt outside [-1, K) or pred outside [-1, K).
  void add(std::span<const std::int32_t> pred, std::span<const std::int32_t> gt);
  ConfusionMatrix& operator+=(const ConfusionMatrix& other);
  bool operator==(const ConfusionMatrix& other) const = default;

 private:
  int k_ = 0;
  std::vector<std::uint64_t> counts_;
  std::vector<std::uint64_t> missed_;
};

ConfusionMatrix accumulate(std::span<const std::int32_t> pred, std::span<const std::int32_t> gt, int classes);

/// Percentages. present[k] is false for classes with no ground truth and no prediction;
/// those are left out of the means.
struct ClassScores {
  std::vector<double> iou;
  std::vector<double> acc;
  std::vector<bool> present;
  double miou = 0.0;
  double macc = 0.0;
};

/// Throws std::invalid_argument if no class has ground-truth points.
ClassScores miou_macc(const ConfusionMatrix& cm);

/// Mean of `values` over the present classes among `ids`; NaN when none is present.
double mean_over(const std::vector<double>& values, const std::vector<bool>& present, std::span<const int> ids);

/// 2 S U / (S + U), 0 when S + U == 0. Throws std::invalid_argument on negative input.
double hiou(double miou_seen, double miou_unseen);

/// Classes sorted by descending count (ties by id), cut into three near-equal groups;
/// remainders go to the earlier groups. Throws std::invalid_argument with fewer than 3 classes.
std::array<std::vector<int>, 3> split_head_common_tail(std::span<const std::uint64_t> class_point_counts,
                                                       std::span<const int> class_ids = {});

struct GroupScore {
  std::string name;
  double miou = 0.0;
  double macc = 0.0;
};

struct EvalReport {
  std::vector<std::string> class_names;
  ClassScores scores;
  std::vector<GroupScore> groups;
  bool has_hiou = false;
  double hiou_value = 0.0;
  std::uint64_t points = 0;
};

/// CSV with one row per class followed by the group rows; one decimal like the tables
/// the metric is usually reported in.
void write_report_csv(const std::filesystem::path& path, const EvalReport& report);
std::string format_report_table(const EvalReport& report);

}  // namespace fo3d
