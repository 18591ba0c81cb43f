#include "fo3d/openvocab.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include "fo3d/errors.hpp"
#include "fo3d/keyvalue.hpp"

namespace fs = std::filesystem;

namespace fo3d {

namespace {

bool row_valid(std::span<const std::uint8_t> valid, std::size_t i) { return valid.empty() || valid[i] != 0; }

void check_valid_mask(std::span<const std::uint8_t> valid, Eigen::Index n, const char* who) {
  if (!valid.empty() && valid.size() != static_cast<std::size_t>(n)) {
    throw std::invalid_argument(std::string(who) + ": validity mask length differs from feature rows");
  }
}

std::string class_label(const std::vector<std::string>& names, int k) {
  if (static_cast<std::size_t>(k) < names.size()) return "'" + names[static_cast<std::size_t>(k)] + "' (" + std::to_string(k) + ")";
  return std::to_string(k);
}

std::vector<double> row_norms(const MatrixT<double>& m) {
  std::vector<double> out(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) out[static_cast<std::size_t>(i)] = m.row(i).norm();
  return out;
}

// Argmax over candidate columns (ascending ids) of one score row; ties go to the first.
std::pair<int, double> argmax_row(const MatrixT<double>& scores, Eigen::Index row, std::span<const int> candidates) {
  int best = candidates.front();
  double best_score = scores(row, best);
  for (std::size_t j = 1; j < candidates.size(); ++j) {
    const double s = scores(row, candidates[j]);
    if (s > best_score) {
      best = candidates[j];
      best_score = s;
    }
  }
  return {best, best_score};
}

std::vector<int> sorted_candidates(std::span<const int> candidates, int k, const char* who) {
  std::vector<int> out;
  if (candidates.empty()) {
    out.resize(static_cast<std::size_t>(k));
    std::iota(out.begin(), out.end(), 0);
    return out;
  }
  out.assign(candidates.begin(), candidates.end());
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  if (out.front() < 0 || out.back() >= k) throw std::invalid_argument(std::string(who) + ": class id out of range");
  return out;
}

}  // namespace

EmbeddingMatrix build_class_embeddings(std::span<const float> prompt_embeddings, int k, int p, int c,
                                       std::vector<std::string> names) {
  if (k < 1 || p < 1 || c < 1) throw std::invalid_argument("build_class_embeddings: K, P and C must be >= 1");
  const auto ku = static_cast<std::size_t>(k), pu = static_cast<std::size_t>(p), cu = static_cast<std::size_t>(c);
  if (prompt_embeddings.size() != ku * pu * cu) {
    throw std::invalid_argument("build_class_embeddings: expected K*P*C values");
  }
  if (!names.empty() && names.size() != ku) throw std::invalid_argument("build_class_embeddings: name count differs from K");
  EmbeddingMatrix emb;
  emb.rows.resize(k, c);
  std::vector<double> mean(cu);
  std::vector<float> column(pu);
  for (std::size_t ki = 0; ki < ku; ++ki) {
    const float* base = prompt_embeddings.data() + ki * pu * cu;
    for (std::size_t ci = 0; ci < cu; ++ci) {
      // summing in sorted order makes the result independent of prompt order
      for (std::size_t pi = 0; pi < pu; ++pi) column[pi] = base[pi * cu + ci];
      std::sort(column.begin(), column.end());
      double s = 0.0;
      for (float v : column) s += v;
      mean[ci] = s / static_cast<double>(p);
    }
    double norm = 0.0;
    for (double v : mean) norm += v * v;
    norm = std::sqrt(norm);
    if (!(norm > 1e-12)) {
      throw DataError("class " + class_label(names, static_cast<int>(ki)) + " has a zero-norm mean text embedding");
    }
    for (std::size_t ci = 0; ci < cu; ++ci) {
      emb.rows(static_cast<Eigen::Index>(ki), static_cast<Eigen::Index>(ci)) = static_cast<float>(mean[ci] / norm);
    }
  }
  emb.names = std::move(names);
  emb.normalized = true;
  return emb;
}

EmbeddingMatrix build_class_embeddings(const Tensor& t, std::vector<std::string> names) {
  if (t.dtype() != DType::kF32) throw FormatError("class embeddings must be f32");
  if (t.rank() == 2) {
    return build_class_embeddings(t.values<float>(), static_cast<int>(t.dim(0)), 1, static_cast<int>(t.dim(1)),
                                  std::move(names));
  }
  if (t.rank() == 3) {
    return build_class_embeddings(t.values<float>(), static_cast<int>(t.dim(0)), static_cast<int>(t.dim(1)),
                                  static_cast<int>(t.dim(2)), std::move(names));
  }
  throw FormatError("class embeddings must have rank 2 [K, C] or 3 [K, P, C]");
}

MatrixT<double> cosine_scores(const FeatureMatrix& features, const EmbeddingMatrix& emb) {
  if (features.cols() != emb.rows.cols()) {
    throw std::invalid_argument("feature dim " + std::to_string(features.cols()) + " != embedding dim " +
                                std::to_string(emb.rows.cols()));
  }
  const MatrixT<double> f = features.cast<double>();
  const MatrixT<double> e = emb.rows.cast<double>();
  MatrixT<double> s = f * e.transpose();
  const auto nf = row_norms(f);
  const auto ne = row_norms(e);
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    for (Eigen::Index k = 0; k < s.cols(); ++k) {
      const double d = nf[static_cast<std::size_t>(i)] * ne[static_cast<std::size_t>(k)];
      s(i, k) = d > 0.0 ? std::clamp(s(i, k) / d, -1.0, 1.0) : 0.0;
    }
  }
  return s;
}

Segmentation classify_points(const FeatureMatrix& features, const EmbeddingMatrix& emb,
                             std::span<const std::uint8_t> valid, std::span<const int> candidates) {
  if (emb.size() == 0) throw std::invalid_argument("classify_points: no classes");
  if (!emb.normalized) throw std::invalid_argument("classify_points: embeddings must be normalized");
  check_valid_mask(valid, features.rows(), "classify_points");
  const std::vector<int> cand = sorted_candidates(candidates, emb.size(), "classify_points");
  const MatrixT<double> scores = cosine_scores(features, emb);
  const auto n = static_cast<std::size_t>(features.rows());
  Segmentation seg{std::vector<std::int32_t>(n, -1), std::vector<float>(n, 0.0f)};
  for (std::size_t i = 0; i < n; ++i) {
    if (!row_valid(valid, i)) continue;
    const auto [k, s] = argmax_row(scores, static_cast<Eigen::Index>(i), cand);
    seg.labels[i] = k;
    seg.scores[i] = static_cast<float>(s);
  }
  return seg;
}

std::vector<std::uint8_t> open_world_query(const FeatureMatrix& features, std::span<const float> query,
                                           const QueryMode& mode, std::span<const std::uint8_t> valid) {
  if (mode.threshold.has_value() == mode.top_fraction.has_value()) {
    throw std::invalid_argument("open_world_query: give exactly one of threshold or top fraction");
  }
  if (mode.top_fraction && !(*mode.top_fraction > 0.0 && *mode.top_fraction <= 1.0)) {
    throw std::invalid_argument("open_world_query: top fraction must be in (0, 1]");
  }
  if (query.size() != static_cast<std::size_t>(features.cols())) {
    throw std::invalid_argument("open_world_query: query dim differs from feature dim");
  }
  check_valid_mask(valid, features.rows(), "open_world_query");
  EmbeddingMatrix q;
  q.rows = Eigen::Map<const FeatureMatrix>(query.data(), 1, static_cast<Eigen::Index>(query.size()));
  if (!(q.rows.cast<double>().norm() > 1e-12)) throw DataError("open_world_query: zero-norm query embedding");
  const MatrixT<double> scores = cosine_scores(features, q);

  const auto n = static_cast<std::size_t>(features.rows());
  std::vector<std::uint8_t> mask(n, 0);
  if (mode.threshold) {
    for (std::size_t i = 0; i < n; ++i) {
      mask[i] = row_valid(valid, i) && scores(static_cast<Eigen::Index>(i), 0) >= *mode.threshold ? 1 : 0;
    }
    return mask;
  }
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < n; ++i) {
    if (row_valid(valid, i)) order.push_back(i);
  }
  if (order.empty()) return mask;
  const auto keep = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(*mode.top_fraction * static_cast<double>(order.size()))), 1, order.size());
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores(static_cast<Eigen::Index>(a), 0) > scores(static_cast<Eigen::Index>(b), 0);
  });
  for (std::size_t j = 0; j < keep; ++j) mask[order[j]] = 1;
  return mask;
}

std::vector<std::int32_t> generate_pseudo_labels(const FeatureMatrix& features, const EmbeddingMatrix& emb,
                                                 std::span<const std::int32_t> gt_seen_labels,
                                                 std::span<const int> unseen_class_ids, PseudoLabelMode mode,
                                                 std::span<const std::uint8_t> valid) {
  if (gt_seen_labels.size() != static_cast<std::size_t>(features.rows())) {
    throw std::invalid_argument("generate_pseudo_labels: label count differs from feature rows");
  }
  for (std::int32_t g : gt_seen_labels) {
    if (g < -1 || g >= emb.size()) throw std::invalid_argument("generate_pseudo_labels: label out of range");
  }
  if (mode == PseudoLabelMode::kRestricted && unseen_class_ids.empty()) {
    throw std::invalid_argument("generate_pseudo_labels: no unseen classes in restricted mode");
  }
  const Segmentation seg = classify_points(
      features, emb, valid,
      mode == PseudoLabelMode::kRestricted ? unseen_class_ids : std::span<const int>{});
  std::vector<std::int32_t> out(gt_seen_labels.begin(), gt_seen_labels.end());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out[i] < 0) out[i] = seg.labels[i];
  }
  return out;
}

std::vector<std::string> LabelSet::names() const {
  std::vector<std::string> out;
  for (const auto& c : classes) out.push_back(c.name);
  return out;
}

std::vector<int> LabelSet::active_ids() const {
  std::vector<int> out;
  for (int i = 0; i < size(); ++i) {
    if (!classes[static_cast<std::size_t>(i)].ignored) out.push_back(i);
  }
  return out;
}

std::vector<int> LabelSet::unseen_ids() const {
  std::vector<int> out;
  for (int i : active_ids()) {
    if (classes[static_cast<std::size_t>(i)].unseen) out.push_back(i);
  }
  return out;
}

std::vector<int> LabelSet::seen_ids() const {
  std::vector<int> out;
  for (int i : active_ids()) {
    if (!classes[static_cast<std::size_t>(i)].unseen) out.push_back(i);
  }
  return out;
}

std::vector<int> LabelSet::group_ids(FrequencyGroup g) const {
  std::vector<int> out;
  for (int i : active_ids()) {
    if (classes[static_cast<std::size_t>(i)].group == g) out.push_back(i);
  }
  return out;
}

int LabelSet::index_of(const std::string& name) const {
  for (int i = 0; i < size(); ++i) {
    if (classes[static_cast<std::size_t>(i)].name == name) return i;
  }
  return -1;
}

LabelSet parse_label_set(const std::string& text, const std::string& origin) {
  LabelSet set;
  std::set<std::string> seen_names;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ls(line);
    std::string f;
    while (std::getline(ls, f, '|')) fields.push_back(trim(f));
    const std::string where = origin + ":" + std::to_string(lineno);
    if (fields.empty() || fields[0].empty()) throw ConfigError(where + ": missing class name");
    if (fields.size() > 4) throw ConfigError(where + ": too many fields");
    LabelClass c;
    c.name = fields[0];
    if (fields.size() > 1) {
      const std::string& g = fields[1];
      if (g == "head") c.group = FrequencyGroup::kHead;
      else if (g == "common") c.group = FrequencyGroup::kCommon;
      else if (g == "tail") c.group = FrequencyGroup::kTail;
      else if (g.empty() || g == "-") c.group = FrequencyGroup::kNone;
      else throw ConfigError(where + ": unknown group '" + g + "'");
    }
    if (fields.size() > 2) {
      const std::string& s = fields[2];
      if (s == "unseen") c.unseen = true;
      else if (!(s == "seen" || s.empty() || s == "-")) throw ConfigError(where + ": expected seen or unseen, got '" + s + "'");
    }
    if (fields.size() > 3) {
      const std::string& ig = fields[3];
      if (ig == "ignore") c.ignored = true;
      else if (!(ig.empty() || ig == "-")) throw ConfigError(where + ": expected 'ignore', got '" + ig + "'");
    }
    if (!seen_names.insert(c.name).second) throw ConfigError(where + ": duplicate class '" + c.name + "'");
    set.classes.push_back(c);
  }
  if (set.classes.empty()) throw ConfigError(origin + ": label set has no classes");
  return set;
}

LabelSet read_label_set(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open label set " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_label_set(ss.str(), path.string());
}

void check_label_set(const LabelSet& labels, const EmbeddingMatrix& emb) {
  if (emb.size() != labels.size()) {
    throw ConfigError("label set has " + std::to_string(labels.size()) + " classes but the embeddings have " +
                      std::to_string(emb.size()) + " rows");
  }
  if (!emb.names.empty() && emb.names != labels.names()) {
    throw ConfigError("embedding class names do not match the label set");
  }
}

EmbeddingMatrix load_class_embeddings(const fs::path& path, const LabelSet& labels) {
  const Tensor t = read_tensor(path);
  if (t.rank() < 2 || t.rank() > 3 || t.dim(0) != static_cast<std::size_t>(labels.size())) {
    throw ConfigError(path.string() + ": expected [" + std::to_string(labels.size()) + ", (P,) C] embeddings");
  }
  EmbeddingMatrix emb = build_class_embeddings(t, labels.names());
  check_label_set(labels, emb);
  return emb;
}

std::vector<float> load_query_embedding(const fs::path& path) {
  const Tensor t = read_tensor(path);
  if (t.dtype() != DType::kF32) throw FormatError(path.string() + ": query embedding must be f32");
  if (t.rank() == 1) {
    std::vector<float> v(t.values<float>().begin(), t.values<float>().end());
    return v;
  }
  if (t.rank() == 2) {
    const EmbeddingMatrix e = build_class_embeddings(t.values<float>(), 1, static_cast<int>(t.dim(0)),
                                                     static_cast<int>(t.dim(1)), {"query"});
    return {e.rows.data(), e.rows.data() + e.rows.size()};
  }
  throw FormatError(path.string() + ": query embedding must be [C] or [P, C]");
}

std::array<std::uint8_t, 3> palette_color(std::int32_t label) {
  static constexpr std::array<std::array<std::uint8_t, 3>, 20> kBase = {{
      {174, 199, 232}, {152, 223, 138}, {31, 119, 180},  {255, 187, 120}, {188, 189, 34},
      {140, 86, 75},   {255, 152, 150}, {214, 39, 40},   {197, 176, 213}, {148, 103, 189},
      {196, 156, 148}, {23, 190, 207},  {247, 182, 210}, {219, 219, 141}, {255, 127, 14},
      {158, 218, 229}, {44, 160, 44},   {112, 128, 144}, {227, 119, 194}, {82, 84, 163},
  }};
  if (label < 0) return {128, 128, 128};
  if (label < static_cast<std::int32_t>(kBase.size())) return kBase[static_cast<std::size_t>(label)];
  // deterministic spread for larger vocabularies
  std::uint32_t h = static_cast<std::uint32_t>(label) * 2654435761u;
  return {static_cast<std::uint8_t>(64 + (h & 0x7f)), static_cast<std::uint8_t>(64 + ((h >> 8) & 0x7f)),
          static_cast<std::uint8_t>(64 + ((h >> 16) & 0x7f))};
}

void write_labeled_ply(const fs::path& path, const PointCloud& cloud, std::span<const std::int32_t> labels) {
  if (labels.size() != cloud.size()) throw std::invalid_argument("write_labeled_ply: label count differs from cloud");
  PointCloud out{cloud.positions, std::vector<std::array<std::uint8_t, 3>>(cloud.size())};
  for (std::size_t i = 0; i < labels.size(); ++i) (*out.colors)[i] = palette_color(labels[i]);
  write_ply(path, out);
}

void write_mask_ply(const fs::path& path, const PointCloud& cloud, std::span<const std::uint8_t> mask) {
  if (mask.size() != cloud.size()) throw std::invalid_argument("write_mask_ply: mask length differs from cloud");
  PointCloud out{cloud.positions, std::vector<std::array<std::uint8_t, 3>>(cloud.size())};
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) {
      (*out.colors)[i] = {255, 0, 0};
    } else if (cloud.colors) {
      const auto& c = (*cloud.colors)[i];
      (*out.colors)[i] = {static_cast<std::uint8_t>(c[0] / 3), static_cast<std::uint8_t>(c[1] / 3),
                          static_cast<std::uint8_t>(c[2] / 3)};
    } else {
      (*out.colors)[i] = {90, 90, 90};
    }
  }
  write_ply(path, out);
}

}  // namespace fo3d
