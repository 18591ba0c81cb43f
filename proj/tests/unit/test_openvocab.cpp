#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "fo3d/errors.hpp"
#include "fo3d/openvocab.hpp"

using namespace fo3d;

namespace {

FeatureMatrix random_matrix(int r, int c, std::mt19937& rng) {
  std::normal_distribution<float> nd;
  FeatureMatrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = nd(rng);
  return m;
}

EmbeddingMatrix embed(const FeatureMatrix& rows) {
  return build_class_embeddings(std::span<const float>(rows.data(), static_cast<std::size_t>(rows.size())),
                                static_cast<int>(rows.rows()), 1, static_cast<int>(rows.cols()));
}

std::vector<int> all_ids(int k) {
  std::vector<int> ids(static_cast<std::size_t>(k));
  std::iota(ids.begin(), ids.end(), 0);
  return ids;
}

}  // namespace

TEST_SUITE("openvocab") {
  TEST_CASE("one prompt gives the normalized row") {
    const std::vector<float> e = {3, 4, 0, 0, 0, 2};
    const EmbeddingMatrix m = build_class_embeddings(e, 2, 1, 3);
    CHECK(m.normalized);
    CHECK(m.rows(0, 0) == doctest::Approx(0.6));
    CHECK(m.rows(0, 1) == doctest::Approx(0.8));
    CHECK(m.rows(1, 2) == 1.0f);
  }

  TEST_CASE("opposite prompts cancel and name the class") {
    const std::vector<float> e = {1, 2, 3, 1, 0, 0, 1, 0, 0, -1, 0, 0};
    CHECK_THROWS_WITH_AS(build_class_embeddings(e, 2, 2, 3, {"lamp", "desk"}), doctest::Contains("desk"), DataError);
    CHECK_THROWS_AS(build_class_embeddings(e, 2, 2, 4), std::invalid_argument);
  }

  TEST_CASE("prompt order does not matter") {
    std::mt19937 rng(3);
    const FeatureMatrix prompts = random_matrix(4 * 5, 8, rng);  // K=4, P=5
    std::vector<float> a(prompts.data(), prompts.data() + prompts.size()), b = a;
    // reverse the prompts inside each class
    for (int k = 0; k < 4; ++k) {
      for (int p = 0; p < 5; ++p) {
        std::copy_n(a.begin() + (k * 5 + p) * 8, 8, b.begin() + (k * 5 + 4 - p) * 8);
      }
    }
    CHECK(build_class_embeddings(a, 4, 5, 8).rows == build_class_embeddings(b, 4, 5, 8).rows);
  }

  TEST_CASE("tensor forms") {
    const std::vector<float> v = {1, 0, 0, 0, 1, 0};
    const Tensor two = Tensor::from<float>({2, 3}, v);
    CHECK(build_class_embeddings(two).size() == 2);
    const Tensor three = Tensor::from<float>({2, 1, 3}, v);
    CHECK(build_class_embeddings(three).rows == build_class_embeddings(two).rows);
    CHECK_THROWS(build_class_embeddings(Tensor(DType::kF32, {6})));
  }

  TEST_CASE("classification examples") {
    FeatureMatrix classes(3, 2);
    classes << 1, 0, 0, 1, -1, -1;
    const EmbeddingMatrix emb = embed(classes);
    FeatureMatrix f(3, 2);
    f << 2, 2, 0, 5, -3, -3.01f;  // equal cosines to rows 0 and 1; row 1 scaled; near row 2
    const Segmentation s = classify_points(f, emb);
    CHECK(s.labels == std::vector<std::int32_t>{0, 1, 2});
    CHECK(s.scores[1] == doctest::Approx(1.0));
    // restricted candidates
    const std::vector<int> cand = {1, 2};
    CHECK(classify_points(f, emb, {}, cand).labels == std::vector<std::int32_t>{1, 1, 2});
    // invalid rows and zero rows
    const std::vector<std::uint8_t> valid = {1, 0, 1};
    const Segmentation masked = classify_points(f, emb, valid);
    CHECK(masked.labels[1] == -1);
    CHECK(masked.scores[1] == 0.0f);
    FeatureMatrix z = FeatureMatrix::Zero(1, 2);
    CHECK(classify_points(z, emb).labels[0] == 0);
  }

  TEST_CASE("classification equals the argmax oracle and ignores feature scale") {
    std::mt19937 rng(5);
    for (int trial = 0; trial < 20; ++trial) {
      const int k = 2 + static_cast<int>(rng() % 20), c = 2 + static_cast<int>(rng() % 30);
      const FeatureMatrix classes = random_matrix(k, c, rng);
      const FeatureMatrix f = random_matrix(200, c, rng);
      const EmbeddingMatrix emb = embed(classes);
      const Segmentation s = classify_points(f, emb);
      const auto ref = fo3d::test::classify_oracle(f, classes, all_ids(k));
      for (std::size_t i = 0; i < ref.size(); ++i) REQUIRE(s.labels[i] == ref[i]);
      FeatureMatrix scaled = f;
      for (Eigen::Index i = 0; i < scaled.rows(); ++i) scaled.row(i) *= std::pow(10.0f, static_cast<float>(i % 7) - 3.0f);
      CHECK(classify_points(scaled, emb).labels == s.labels);
    }
  }

  TEST_CASE("classification errors") {
    FeatureMatrix classes(2, 3);
    classes.setOnes();
    EmbeddingMatrix emb = embed(classes);
    CHECK_THROWS_AS(classify_points(FeatureMatrix::Ones(2, 4), emb), std::invalid_argument);
    emb.normalized = false;
    CHECK_THROWS_AS(classify_points(FeatureMatrix::Ones(2, 3), emb), std::invalid_argument);
    CHECK_THROWS_AS(classify_points(FeatureMatrix::Ones(2, 3), EmbeddingMatrix{}), std::invalid_argument);
  }

  TEST_CASE("query threshold -1 selects every valid point") {
    std::mt19937 rng(7);
    const FeatureMatrix f = random_matrix(100, 6, rng);
    const std::vector<float> q = {1, 0, 0, 0, 0, 0};
    const auto mask = open_world_query(f, q, {-1.0, std::nullopt});
    CHECK(std::count(mask.begin(), mask.end(), 1) == 100);
    std::vector<std::uint8_t> valid(100, 1);
    valid[3] = 0;
    const auto m2 = open_world_query(f, q, {-1.0, std::nullopt}, valid);
    CHECK(m2[3] == 0);
    CHECK(std::count(m2.begin(), m2.end(), 1) == 99);
  }

  TEST_CASE("rho = 1/N selects the single best point") {
    std::mt19937 rng(8);
    const FeatureMatrix f = random_matrix(50, 4, rng);
    const std::vector<float> q = {0.2f, -1, 0.5f, 0.1f};
    const auto mask = open_world_query(f, q, {std::nullopt, 1.0 / 50});
    REQUIRE(std::count(mask.begin(), mask.end(), 1) == 1);
    FeatureMatrix qm(1, 4);
    qm << 0.2f, -1, 0.5f, 0.1f;
    // the argmax over points is the argmax over "classes" with the roles swapped
    const auto ref = fo3d::test::classify_oracle(qm, f, all_ids(50));
    CHECK(mask[static_cast<std::size_t>(ref[0])] == 1);
    // tiny rho still keeps one point
    const auto one = open_world_query(f, q, {std::nullopt, 1e-6});
    CHECK(std::count(one.begin(), one.end(), 1) == 1);
  }

  TEST_CASE("planted subset is recovered exactly by rho") {
    std::mt19937 rng(9);
    const int n = 1000, c = 16;
    FeatureMatrix f = random_matrix(n, c, rng);
    std::vector<float> q(c, 0.0f);
    q[0] = 1.0f;
    // 100 planted points point almost along q, the rest are orthogonal to it
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::uint8_t> truth(n, 0);
    for (int i = 0; i < n; ++i) f(i, 0) = 0.0f;
    for (int i = 0; i < 100; ++i) {
      const int p = order[static_cast<std::size_t>(i)];
      truth[static_cast<std::size_t>(p)] = 1;
      f(p, 0) = 50.0f;
    }
    const auto mask = open_world_query(f, q, {std::nullopt, 0.1});
    int tp = 0, sel = 0;
    for (int i = 0; i < n; ++i) {
      sel += mask[static_cast<std::size_t>(i)];
      tp += mask[static_cast<std::size_t>(i)] & truth[static_cast<std::size_t>(i)];
    }
    CHECK(sel == 100);
    CHECK(tp == 100);
  }

  TEST_CASE("selection shrinks as theta rises") {
    std::mt19937 rng(10);
    const FeatureMatrix f = random_matrix(300, 5, rng);
    const std::vector<float> q = {1, 1, 0, 0, -1};
    std::vector<std::uint8_t> prev(300, 1);
    for (double theta = -1.0; theta <= 1.0; theta += 0.1) {
      const auto m = open_world_query(f, q, {theta, std::nullopt});
      for (std::size_t i = 0; i < m.size(); ++i) REQUIRE(m[i] <= prev[i]);
      prev = m;
    }
  }

  TEST_CASE("query mode errors") {
    const FeatureMatrix f = FeatureMatrix::Ones(4, 2);
    const std::vector<float> q = {1, 0};
    CHECK_THROWS_AS(open_world_query(f, q, {}), std::invalid_argument);
    CHECK_THROWS_AS(open_world_query(f, q, {0.5, 0.5}), std::invalid_argument);
    CHECK_THROWS_AS(open_world_query(f, q, {std::nullopt, 0.0}), std::invalid_argument);
    CHECK_THROWS_AS(open_world_query(f, q, {std::nullopt, 1.5}), std::invalid_argument);
    CHECK_THROWS_AS(open_world_query(f, std::vector<float>{1, 0, 0}, {0.5, std::nullopt}), std::invalid_argument);
  }

  TEST_CASE("pseudo-labels keep seen ground truth and fill the rest") {
    FeatureMatrix classes(3, 3);
    classes << 1, 0, 0, 0, 1, 0, 0, 0, 1;
    const EmbeddingMatrix emb = embed(classes);
    FeatureMatrix f(4, 3);
    f << 1, 0, 0, 1, 0.2f, 0.1f, 0, 0.3f, 1, 0.9f, 0.1f, 0;
    const std::vector<std::int32_t> gt = {0, -1, -1, -1};
    const std::vector<int> unseen = {1, 2};
    CHECK(generate_pseudo_labels(f, emb, gt, unseen) == std::vector<std::int32_t>{0, 1, 2, 1});
    CHECK(generate_pseudo_labels(f, emb, gt, unseen, PseudoLabelMode::kFull) == std::vector<std::int32_t>{0, 0, 2, 0});
    const std::vector<std::uint8_t> valid = {1, 1, 0, 1};
    CHECK(generate_pseudo_labels(f, emb, gt, unseen, PseudoLabelMode::kRestricted, valid)[2] == -1);
  }

  TEST_CASE("pseudo-labels never overwrite a labeled point") {
    std::mt19937 rng(11);
    const FeatureMatrix f = random_matrix(400, 8, rng);
    const EmbeddingMatrix emb = embed(random_matrix(6, 8, rng));
    std::vector<std::int32_t> gt(400);
    for (auto& g : gt) g = static_cast<std::int32_t>(rng() % 7) - 1;
    const std::vector<int> unseen = {4, 5};
    const auto out = generate_pseudo_labels(f, emb, gt, unseen);
    for (std::size_t i = 0; i < gt.size(); ++i) {
      if (gt[i] >= 0) {
        REQUIRE(out[i] == gt[i]);
      } else {
        REQUIRE((out[i] == 4 || out[i] == 5));
      }
    }
  }

  TEST_CASE("label-set parsing") {
    const LabelSet ls = parse_label_set(
        "# desk classes\n"
        "monitor | head | seen\n"
        "keyboard|common|unseen\n"
        "\n"
        "mug | tail | unseen # comment\n"
        "wall | - | seen | ignore\n"
        "lamp\n");
    REQUIRE(ls.size() == 5);
    CHECK(ls.names() == std::vector<std::string>{"monitor", "keyboard", "mug", "wall", "lamp"});
    CHECK(ls.unseen_ids() == std::vector<int>{1, 2});
    CHECK(ls.seen_ids() == std::vector<int>{0, 4});
    CHECK(ls.active_ids() == std::vector<int>{0, 1, 2, 4});
    CHECK(ls.group_ids(FrequencyGroup::kTail) == std::vector<int>{2});
    CHECK(ls.index_of("mug") == 2);
    CHECK(ls.index_of("sofa") == -1);
    CHECK(ls.classes[3].ignored);
  }

  TEST_CASE("label-set errors") {
    CHECK_THROWS_AS(parse_label_set("a | huge\n"), ConfigError);
    CHECK_THROWS_AS(parse_label_set("a | head | maybe\n"), ConfigError);
    CHECK_THROWS_AS(parse_label_set("a\na\n"), ConfigError);
    CHECK_THROWS_AS(parse_label_set("# nothing\n"), ConfigError);
    CHECK_THROWS_AS(read_label_set("/nonexistent/labels.txt"), std::exception);
    const LabelSet ls = parse_label_set("a\nb\n");
    FeatureMatrix rows(3, 2);
    rows.setOnes();
    CHECK_THROWS_AS(check_label_set(ls, embed(rows)), ConfigError);
    CHECK_NOTHROW(check_label_set(ls, embed(FeatureMatrix(rows.topRows(2)))));
  }

  TEST_CASE("embedding and query files") {
    fo3d::test::TempDir dir;
    const std::vector<float> v = {1, 0, 0, 1, 0, 0, 0, 0, 2, 0, 0, 1};
    write_tensor(dir / "emb.fot", Tensor::from<float>({2, 2, 3}, v));
    const EmbeddingMatrix emb = load_class_embeddings(dir / "emb.fot", parse_label_set("x\ny\n"));
    CHECK(emb.names == std::vector<std::string>{"x", "y"});
    CHECK(emb.rows(1, 2) == 1.0f);
    CHECK_THROWS_AS(load_class_embeddings(dir / "emb.fot", parse_label_set("x\ny\nz\n")), ConfigError);
    write_tensor(dir / "q.fot", Tensor::from<float>({2, 3}, std::vector<float>(v.begin(), v.begin() + 6)));
    CHECK(load_query_embedding(dir / "q.fot") == std::vector<float>{1, 0, 0});
  }

  TEST_CASE("palette and labeled clouds") {
    CHECK(palette_color(-1) == std::array<std::uint8_t, 3>{128, 128, 128});
    CHECK(palette_color(0) != palette_color(1));
    fo3d::test::TempDir dir;
    const PointCloud c = fo3d::test::random_cloud(5, 1);
    const std::vector<std::int32_t> labels = {0, 1, -1, 2, 0};
    write_labeled_ply(dir / "l.ply", c, labels);
    const PointCloud back = read_ply(dir / "l.ply");
    REQUIRE(back.size() == 5);
    REQUIRE(back.colors.has_value());
    CHECK((*back.colors)[2] == palette_color(-1));
    CHECK((*back.colors)[3] == palette_color(2));
    CHECK_THROWS_AS(write_labeled_ply(dir / "bad.ply", c, std::vector<std::int32_t>{0}), std::invalid_argument);
  }
}
