#include "fo3d/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace fo3d {

ConfusionMatrix::ConfusionMatrix(int classes)
    : k_(classes),
      counts_(static_cast<std::size_t>(classes) * static_cast<std::size_t>(classes), 0),
      missed_(static_cast<std::size_t>(classes), 0) {
  if (classes < 1) throw std::invalid_argument("ConfusionMatrix: need at least one class");
}

std::uint64_t ConfusionMatrix::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0}) +
         std::accumulate(missed_.begin(), missed_.end(), std::uint64_t{0});
}

std::uint64_t ConfusionMatrix::gt_count(int k) const {
  std::uint64_t s = missed(k);
  for (int p = 0; p < k_; ++p) s += at(k, p);
  return s;
}

std::uint64_t ConfusionMatrix::pred_count(int k) const {
  std::uint64_t s = 0;
  for (int g = 0; g < k_; ++g) s += at(g, k);
  return s;
}

void ConfusionMatrix::add(std::span<const std::int32_t> pred, std::span<const std::int32_t> gt) {
  if (pred.size() != gt.size()) throw std::invalid_argument("confusion matrix: prediction and label lengths differ");
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const std::int32_t g = gt[i], p = pred[i];
    if (g < -1 || g >= k_) throw std::invalid_argument("confusion matrix: label " + std::to_string(g) + " out of range");
    if (p < -1 || p >= k_) {
      throw std::invalid_argument("confusion matrix: prediction " + std::to_string(p) + " out of range");
    }
    if (g < 0) continue;
    if (p < 0) {
      ++missed_[static_cast<std::size_t>(g)];
    } else {
      ++counts_[static_cast<std::size_t>(g) * k_ + p];
    }
  }
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  if (other.k_ != k_) throw std::invalid_argument("confusion matrix: class counts differ");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  for (std::size_t i = 0; i < missed_.size(); ++i) missed_[i] += other.missed_[i];
  return *this;
}

ConfusionMatrix accumulate(std::span<const std::int32_t> pred, std::span<const std::int32_t> gt, int classes) {
  ConfusionMatrix cm(classes);
  cm.add(pred, gt);
  return cm;
}

ClassScores miou_macc(const ConfusionMatrix& cm) {
  const int k = cm.classes();
  ClassScores s;
  s.iou.assign(static_cast<std::size_t>(k), 0.0);
  s.acc.assign(static_cast<std::size_t>(k), 0.0);
  s.present.assign(static_cast<std::size_t>(k), false);
  bool any_gt = false;
  for (int c = 0; c < k; ++c) {
    const auto kc = static_cast<std::size_t>(c);
    const double tp = static_cast<double>(cm.at(c, c));
    const double gt = static_cast<double>(cm.gt_count(c));
    const double pred = static_cast<double>(cm.pred_count(c));
    any_gt = any_gt || gt > 0;
    s.present[kc] = gt + pred > 0;
    if (!s.present[kc]) continue;
    s.iou[kc] = 100.0 * tp / (gt + pred - tp);
    s.acc[kc] = gt > 0 ? 100.0 * tp / gt : 0.0;
  }
  if (!any_gt) throw std::invalid_argument("miou_macc: no class has ground-truth points");
  std::vector<int> all(static_cast<std::size_t>(k));
  std::iota(all.begin(), all.end(), 0);
  s.miou = mean_over(s.iou, s.present, all);
  s.macc = mean_over(s.acc, s.present, all);
  return s;
}

double mean_over(const std::vector<double>& values, const std::vector<bool>& present, std::span<const int> ids) {
  double sum = 0.0;
  int n = 0;
  for (int id : ids) {
    const auto i = static_cast<std::size_t>(id);
    if (i >= values.size() || !present[i]) continue;
    sum += values[i];
    ++n;
  }
  return n > 0 ? sum / n : std::numeric_limits<double>::quiet_NaN();
}

double hiou(double miou_seen, double miou_unseen) {
  if (miou_seen < 0.0 || miou_unseen < 0.0) throw std::invalid_argument("hiou: inputs must be >= 0");
  const double s = miou_seen + miou_unseen;
  return s == 0.0 ? 0.0 : 2.0 * miou_seen * miou_unseen / s;
}

std::array<std::vector<int>, 3> split_head_common_tail(std::span<const std::uint64_t> class_point_counts,
                                                       std::span<const int> class_ids) {
  const std::size_t n = class_point_counts.size();
  if (!class_ids.empty() && class_ids.size() != n) {
    throw std::invalid_argument("split_head_common_tail: ids and counts differ in length");
  }
  if (n < 3) throw std::invalid_argument("split_head_common_tail: need at least 3 classes");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  auto id_of = [&](std::size_t i) { return class_ids.empty() ? static_cast<int>(i) : class_ids[i]; };
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (class_point_counts[a] != class_point_counts[b]) return class_point_counts[a] > class_point_counts[b];
    return id_of(a) < id_of(b);
  });
  std::array<std::vector<int>, 3> groups;
  std::size_t pos = 0;
  for (std::size_t g = 0; g < 3; ++g) {
    const std::size_t size = n / 3 + (g < n % 3 ? 1 : 0);
    for (std::size_t j = 0; j < size; ++j) groups[g].push_back(id_of(order[pos++]));
  }
  return groups;
}

namespace {

std::string fmt1(double v) {
  if (std::isnan(v)) return "-";
  std::ostringstream os;
  os << std::fixed << std::setprecision(1) << v;
  return os.str();
}

}  // namespace

void write_report_csv(const std::filesystem::path& path, const EvalReport& r) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "name,iou,acc\n";
  for (std::size_t k = 0; k < r.class_names.size(); ++k) {
    if (k >= r.scores.present.size() || !r.scores.present[k]) {
      out << r.class_names[k] << ",-,-\n";
      continue;
    }
    out << r.class_names[k] << "," << fmt1(r.scores.iou[k]) << "," << fmt1(r.scores.acc[k]) << "\n";
  }
  out << "mean," << fmt1(r.scores.miou) << "," << fmt1(r.scores.macc) << "\n";
  for (const auto& g : r.groups) out << "group:" << g.name << "," << fmt1(g.miou) << "," << fmt1(g.macc) << "\n";
  if (r.has_hiou) out << "hiou," << fmt1(r.hiou_value) << ",-\n";
}

std::string format_report_table(const EvalReport& r) {
  std::size_t w = 8;
  for (const auto& n : r.class_names) w = std::max(w, n.size() + 2);
  for (const auto& g : r.groups) w = std::max(w, g.name.size() + 2);
  std::ostringstream os;
  auto row = [&](const std::string& a, const std::string& b, const std::string& c) {
    os << std::left << std::setw(static_cast<int>(w)) << a << std::right << std::setw(8) << b << std::setw(8) << c
       << "\n";
  };
  row("class", "IoU", "Acc");
  os << std::string(w + 16, '-') << "\n";
  for (std::size_t k = 0; k < r.class_names.size(); ++k) {
    const bool p = k < r.scores.present.size() && r.scores.present[k];
    row(r.class_names[k], p ? fmt1(r.scores.iou[k]) : "-", p ? fmt1(r.scores.acc[k]) : "-");
  }
  os << std::string(w + 16, '-') << "\n";
  row("mean", fmt1(r.scores.miou), fmt1(r.scores.macc));
  for (const auto& g : r.groups) row(g.name, fmt1(g.miou), fmt1(g.macc));
  if (r.has_hiou) row("hIoU", fmt1(r.hiou_value), "");
  os << "points evaluated: " << r.points << "\n";
  return os.str();
}

}  // namespace fo3d
