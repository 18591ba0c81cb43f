#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "fo3d/metrics.hpp"

using namespace fo3d;

namespace {

std::vector<std::int32_t> random_labels(std::size_t n, int k, bool allow_missing, std::mt19937& rng) {
  std::vector<std::int32_t> out(n);
  for (auto& v : out) v = static_cast<std::int32_t>(rng() % static_cast<unsigned>(k + (allow_missing ? 1 : 0))) - (allow_missing ? 1 : 0);
  return out;
}

}  // namespace

TEST_SUITE("metrics") {
  TEST_CASE("confusion matrix examples") {
    const std::vector<std::int32_t> pred = {0, 1, 1}, gt = {0, 0, 1};
    const ConfusionMatrix cm = fo3d::accumulate(pred, gt, 2);
    CHECK(cm.at(0, 0) == 1);
    CHECK(cm.at(0, 1) == 1);
    CHECK(cm.at(1, 0) == 0);
    CHECK(cm.at(1, 1) == 1);
    CHECK(cm.total() == 3);
    const std::vector<std::int32_t> same = {0, 1, 2, 2};
    const ConfusionMatrix diag = fo3d::accumulate(same, same, 3);
    CHECK(diag.at(2, 2) == 2);
    CHECK(diag.at(0, 1) == 0);
    const std::vector<std::int32_t> unlabeled = {-1, -1, -1};
    CHECK(fo3d::accumulate(pred, unlabeled, 2).total() == 0);
  }

  TEST_CASE("miou and macc examples") {
    const std::vector<std::int32_t> pred = {0, 1, 1}, gt = {0, 0, 1};
    const ClassScores s = miou_macc(fo3d::accumulate(pred, gt, 2));
    CHECK(s.miou == doctest::Approx(50.0));
    CHECK(s.macc == doctest::Approx(75.0));
    const std::vector<std::int32_t> y = {0, 1, 2, 2, 1};
    const ClassScores perfect = miou_macc(fo3d::accumulate(y, y, 3));
    CHECK(perfect.miou == 100.0);
    CHECK(perfect.macc == 100.0);
    const std::vector<std::int32_t> a = {0, 0, 1, 1}, b = {1, 1, 0, 0};
    const ClassScores swapped = miou_macc(fo3d::accumulate(a, b, 2));
    CHECK(swapped.miou == 0.0);
    CHECK(swapped.macc == 0.0);
  }

  TEST_CASE("classes without ground truth or predictions stay out of the means") {
    const std::vector<std::int32_t> y = {0, 0, 2};
    const ClassScores s = miou_macc(fo3d::accumulate(y, y, 4));
    CHECK(s.present == std::vector<bool>{true, false, true, false});
    CHECK(s.miou == 100.0);
    // predicted but never labeled: present with IoU 0
    const std::vector<std::int32_t> pred = {0, 1}, gt = {0, 0};
    const ClassScores t = miou_macc(fo3d::accumulate(pred, gt, 2));
    CHECK(t.present[1]);
    CHECK(t.iou[1] == 0.0);
    CHECK(t.miou == doctest::Approx(25.0));
    CHECK_THROWS_AS(miou_macc(ConfusionMatrix(3)), std::invalid_argument);
  }

  TEST_CASE("a missing prediction counts as a miss for the true class") {
    const std::vector<std::int32_t> pred = {0, -1}, gt = {0, 0};
    const ConfusionMatrix cm = fo3d::accumulate(pred, gt, 2);
    CHECK(cm.missed(0) == 1);
    CHECK(cm.gt_count(0) == 2);
    CHECK(cm.pred_count(0) == 1);
    const ClassScores s = miou_macc(cm);
    CHECK(s.iou[0] == doctest::Approx(50.0));
    CHECK(s.acc[0] == doctest::Approx(50.0));
    CHECK_FALSE(s.present[1]);
  }

  TEST_CASE("scores agree with the counting oracle") {
    std::mt19937 rng(3);
    for (int trial = 0; trial < 30; ++trial) {
      const int k = 2 + static_cast<int>(rng() % 10);
      const auto gt = random_labels(500, k, true, rng);
      const auto pred = random_labels(500, k, true, rng);
      const ClassScores s = miou_macc(fo3d::accumulate(pred, gt, k));
      const auto o = fo3d::test::iou_oracle(pred, gt, k);
      for (int c = 0; c < k; ++c) {
        const auto kc = static_cast<std::size_t>(c);
        REQUIRE(s.present[kc] == !std::isnan(o.iou[kc]));
        if (!s.present[kc]) continue;
        CHECK(s.iou[kc] == doctest::Approx(o.iou[kc]).epsilon(1e-12));
        CHECK(s.acc[kc] == doctest::Approx(o.acc[kc]).epsilon(1e-12));
        CHECK(s.iou[kc] <= s.acc[kc] + 1e-12);
      }
    }
  }

  TEST_CASE("confusion matrices add over disjoint point sets") {
    std::mt19937 rng(4);
    const auto gt = random_labels(600, 5, true, rng), pred = random_labels(600, 5, true, rng);
    const std::span<const std::int32_t> g(gt), p(pred);
    ConfusionMatrix parts = fo3d::accumulate(p.first(250), g.first(250), 5);
    parts += fo3d::accumulate(p.subspan(250), g.subspan(250), 5);
    CHECK(parts == fo3d::accumulate(pred, gt, 5));
    ConfusionMatrix other(4);
    CHECK_THROWS(parts += other);
  }

  TEST_CASE("invalid inputs") {
    const std::vector<std::int32_t> two = {0, 1}, one = {0}, big = {0, 5}, neg = {0, -2};
    CHECK_THROWS_AS(fo3d::accumulate(two, one, 2), std::invalid_argument);
    CHECK_THROWS_AS(fo3d::accumulate(big, two, 2), std::invalid_argument);
    CHECK_THROWS_AS(fo3d::accumulate(two, big, 2), std::invalid_argument);
    CHECK_THROWS_AS(fo3d::accumulate(two, neg, 2), std::invalid_argument);
  }

  TEST_CASE("harmonic IoU") {
    CHECK(hiou(58.6, 51.6) == doctest::Approx(54.878).epsilon(1e-4));
    CHECK(hiou(64.8, 26.1) == doctest::Approx(37.212).epsilon(1e-4));
    for (double x : {0.5, 13.0, 77.7, 100.0}) CHECK(hiou(x, x) == doctest::Approx(x));
    CHECK(hiou(0.0, 0.0) == 0.0);
    CHECK(hiou(80.0, 0.0) == 0.0);
    std::mt19937 rng(5);
    std::uniform_real_distribution<double> u(0.0, 100.0);
    for (int i = 0; i < 200; ++i) {
      const double s = u(rng), v = u(rng);
      const double h = hiou(s, v);
      CHECK(h >= std::min(s, v) - 1e-12);
      CHECK(h <= (s + v) / 2 + 1e-12);
      CHECK(h == doctest::Approx(hiou(v, s)));
    }
    CHECK_THROWS_AS(hiou(-1.0, 5.0), std::invalid_argument);
  }

  TEST_CASE("mean over a subset") {
    const std::vector<double> v = {10, 20, 30, 40};
    const std::vector<bool> present = {true, false, true, true};
    const std::vector<int> ids = {0, 1, 2};
    CHECK(mean_over(v, present, ids) == doctest::Approx(20.0));
    const std::vector<int> none = {1};
    CHECK(std::isnan(mean_over(v, present, none)));
  }

  TEST_CASE("frequency groups") {
    std::vector<std::uint64_t> counts(36);
    for (std::size_t i = 0; i < 36; ++i) counts[i] = 1000 - i * 10;
    const auto g = split_head_common_tail(counts);
    CHECK(g[0].size() == 12);
    CHECK(g[1].size() == 12);
    CHECK(g[2].size() == 12);
    CHECK(g[0].front() == 0);
    CHECK(g[2].back() == 35);
    const std::vector<std::uint64_t> four = {10, 40, 20, 30};
    const auto h = split_head_common_tail(four);
    CHECK(h[0] == std::vector<int>{1, 3});
    CHECK(h[1] == std::vector<int>{2});
    CHECK(h[2] == std::vector<int>{0});
    const std::vector<std::uint64_t> tied = {5, 5, 5};
    const std::vector<int> ids = {9, 2, 7};
    const auto t = split_head_common_tail(tied, ids);
    CHECK(t[0] == std::vector<int>{2});
    CHECK(t[1] == std::vector<int>{7});
    CHECK(t[2] == std::vector<int>{9});
    CHECK_THROWS_AS(split_head_common_tail(std::vector<std::uint64_t>{1, 2}), std::invalid_argument);
    CHECK_THROWS_AS(split_head_common_tail(tied, std::vector<int>{1}), std::invalid_argument);
  }

  TEST_CASE("report CSV and table") {
    const std::vector<std::int32_t> pred = {0, 1, 1}, gt = {0, 0, 1};
    EvalReport r;
    r.class_names = {"mug", "lamp", "sofa"};
    r.scores = miou_macc(fo3d::accumulate(pred, gt, 3));
    r.groups = {{"seen", 50.0, 50.0}};
    r.has_hiou = true;
    r.hiou_value = 40.0;
    r.points = 3;
    fo3d::test::TempDir dir;
    write_report_csv(dir / "r" / "eval.csv", r);
    std::ifstream in(dir / "r" / "eval.csv");
    std::stringstream ss;
    ss << in.rdbuf();
    CHECK(ss.str() ==
          "name,iou,acc\n"
          "mug,50.0,50.0\n"
          "lamp,50.0,100.0\n"
          "sofa,-,-\n"
          "mean,50.0,75.0\n"
          "group:seen,50.0,50.0\n"
          "hiou,40.0,-\n");
    const std::string table = format_report_table(r);
    CHECK(table.find("hIoU") != std::string::npos);
    CHECK(table.find("points evaluated: 3") != std::string::npos);
  }
}
