#include <doctest.h>

#include <algorithm>
#include <random>

#include "fixtures.hpp"
#include "fo3d/regions.hpp"

using namespace fo3d;

namespace {

bool covers(const std::vector<CropSpec>& crops, int w, int h) {
  std::vector<std::uint8_t> hit(static_cast<std::size_t>(w) * h, 0);
  for (const auto& c : crops) {
    if (c.rect.x0 < 0 || c.rect.y0 < 0 || c.rect.x0 + c.rect.w > w || c.rect.y0 + c.rect.h > h) return false;
    for (int y = c.rect.y0; y < c.rect.y0 + c.rect.h; ++y) {
      for (int x = c.rect.x0; x < c.rect.x0 + c.rect.w; ++x) hit[static_cast<std::size_t>(y) * w + x] = 1;
    }
  }
  return std::all_of(hit.begin(), hit.end(), [](std::uint8_t v) { return v == 1; });
}

FeatureMap filled(int w, int h, int c, std::mt19937& rng) {
  FeatureMap m(w, h, c);
  std::normal_distribution<float> nd;
  for (auto& v : m.data) v = nd(rng);
  return m;
}

}  // namespace

TEST_SUITE("regions") {
  TEST_CASE("scale 1 gives the full view") {
    const std::vector<double> s = {1.0};
    const auto crops = generate_crops(640, 480, s, 0.5);
    REQUIRE(crops.size() == 1);
    CHECK(crops[0].rect == CropRect{0, 0, 640, 480});
  }

  TEST_CASE("three scales on 640x480 give 1 + 9 + 49 crops") {
    const std::vector<double> s = {1.0, 0.5, 0.25};
    const auto crops = generate_crops(640, 480, s, 0.5);
    REQUIRE(crops.size() == 59);
    std::array<int, 3> per_level{};
    for (const auto& c : crops) ++per_level[static_cast<std::size_t>(c.scale_level)];
    CHECK(per_level == std::array<int, 3>{1, 9, 49});
    CHECK(crops[5].rect.w == 320);
    CHECK(crops[20].rect.h == 120);
    CHECK(covers(crops, 640, 480));
  }

  TEST_CASE("union of crops is the view for many view sizes and schedules") {
    for (int w : {64, 97, 320, 641}) {
      for (int h : {48, 64, 251}) {
        for (double stride : {0.25, 0.5, 1.0}) {
          const std::vector<double> s = {1.0, 0.5, 0.3};
          const auto crops = generate_crops(w, h, s, stride);
          REQUIRE_FALSE(crops.empty());
          CHECK(covers(crops, w, h));
          for (const auto& c : crops) {
            CHECK(c.rect.w >= kMinCropSize);
            CHECK(c.rect.h >= kMinCropSize);
          }
        }
      }
    }
  }

  TEST_CASE("scales under the minimum window are skipped") {
    const std::vector<double> s = {1.0, 0.25};
    const auto crops = generate_crops(100, 100, s, 0.5);
    CHECK(crops.size() == 1);
    CHECK_THROWS_AS(generate_crops(100, 100, std::vector<double>{1.5}, 0.5), std::invalid_argument);
    CHECK_THROWS_AS(generate_crops(100, 100, std::vector<double>{1.0}, 0.0), std::invalid_argument);
  }

  TEST_CASE("map equal to the patch grid assigns the identity") {
    const SuperpixelMap m = fo3d::test::block_labels(32, 32, 4, 4);
    const PatchAssignment a = assign_patches(m, 4);
    for (int p = 0; p < 16; ++p) {
      CHECK(a.patch_to_superpixel[static_cast<std::size_t>(p)] == p);
      CHECK(a.token_sets[static_cast<std::size_t>(p)] == std::vector<std::int32_t>{p});
      CHECK(a.centroid_fallback[static_cast<std::size_t>(p)] == 0);
    }
  }

  TEST_CASE("single super-pixel takes every patch") {
    const SuperpixelMap m = fo3d::test::block_labels(30, 30, 1, 1);
    const PatchAssignment a = assign_patches(m, 5);
    CHECK(std::all_of(a.patch_to_superpixel.begin(), a.patch_to_superpixel.end(), [](std::int32_t s) { return s == 0; }));
    CHECK(a.token_sets[0].size() == 25);
  }

  TEST_CASE("majority vote inside one footprint, ties to the smaller label") {
    // one patch covering a 10x10 crop; label 1 owns 60 pixels
    SuperpixelMap m{10, 10, 0, std::vector<std::int32_t>(100, 0), {}};
    for (int i = 0; i < 60; ++i) m.labels[static_cast<std::size_t>(i)] = 1;
    compute_centroids(m);
    CHECK(assign_patches(m, 1).patch_to_superpixel[0] == 1);
    // 50 / 50
    for (int i = 0; i < 100; ++i) m.labels[static_cast<std::size_t>(i)] = i < 50 ? 1 : 0;
    compute_centroids(m);
    CHECK(assign_patches(m, 1).patch_to_superpixel[0] == 0);
  }

  TEST_CASE("segments without a patch fall back to the centroid patch") {
    // a 2x2 island in a 32x32 map with a 4x4 patch grid never wins a vote
    SuperpixelMap m{32, 32, 0, std::vector<std::int32_t>(1024, 0), {}};
    for (int y = 20; y < 22; ++y) {
      for (int x = 12; x < 14; ++x) m.labels[static_cast<std::size_t>(y) * 32 + x] = 1;
    }
    compute_centroids(m);
    const PatchAssignment a = assign_patches(m, 4);
    CHECK(std::none_of(a.patch_to_superpixel.begin(), a.patch_to_superpixel.end(), [](std::int32_t s) { return s < 0; }));
    REQUIRE(a.token_sets[1].size() == 1);
    CHECK(a.centroid_fallback[1] == 1);
    CHECK(a.token_sets[1][0] == (20 / 8) * 4 + 12 / 8);
  }

  TEST_CASE("assignment is total on SLIC maps") {
    for (unsigned seed = 0; seed < 5; ++seed) {
      const SuperpixelMap m = slic(fo3d::test::random_image(64, 48, seed), {50, 10.0, 10});
      const PatchAssignment a = assign_patches(m, 14);
      CHECK(std::none_of(a.patch_to_superpixel.begin(), a.patch_to_superpixel.end(), [](std::int32_t s) { return s < 0; }));
      for (const auto& set : a.token_sets) CHECK_FALSE(set.empty());
    }
  }

  TEST_CASE("one full-view crop returns its own features") {
    std::mt19937 rng(1);
    const FeatureMap f = filled(20, 10, 3, rng);
    const FeatureMap out = stitch_and_fuse({{CropSpec{{0, 0, 20, 10}, 0}, f}}, 20, 10);
    CHECK(out.data == f.data);
  }

  TEST_CASE("a pixel covered twice is the mean") {
    FeatureMap a(2, 1, 1), b(2, 1, 1);
    a.data = {1.0f, 3.0f};
    b.data = {5.0f, 7.0f};
    const FeatureMap out = stitch_and_fuse({{CropSpec{{0, 0, 2, 1}, 0}, a}, {CropSpec{{1, 0, 2, 1}, 1}, b}}, 3, 1);
    CHECK(out.data == std::vector<float>{1.0f, 4.0f, 7.0f});
  }

  TEST_CASE("fusion is linear and independent of crop order") {
    std::mt19937 rng(7);
    const std::vector<double> s = {1.0, 0.5, 0.25};
    const auto crops = generate_crops(160, 128, s, 0.5);
    std::vector<std::pair<CropSpec, FeatureMap>> maps, doubled;
    for (const auto& c : crops) {
      maps.push_back({c, filled(c.rect.w, c.rect.h, 2, rng)});
      FeatureMap d = maps.back().second;
      for (auto& v : d.data) v *= 2.0f;
      doubled.push_back({c, d});
    }
    const FeatureMap base = stitch_and_fuse(maps, 160, 128);
    const FeatureMap twice = stitch_and_fuse(doubled, 160, 128);
    for (std::size_t i = 0; i < base.data.size(); ++i) REQUIRE(twice.data[i] == 2.0f * base.data[i]);
    for (int trial = 0; trial < 3; ++trial) {
      std::shuffle(maps.begin(), maps.end(), rng);
      CHECK(stitch_and_fuse(maps, 160, 128).data == base.data);
    }
  }

  TEST_CASE("uncovered pixels and mismatched channels are errors") {
    FeatureMap a(2, 1, 1), b(2, 1, 2);
    CHECK_THROWS(stitch_and_fuse({{CropSpec{{0, 0, 2, 1}, 0}, a}}, 3, 1));
    CHECK_THROWS_AS(stitch_and_fuse({{CropSpec{{0, 0, 2, 1}, 0}, a}, {CropSpec{{1, 0, 2, 1}, 0}, b}}, 3, 1),
                    std::invalid_argument);
    CHECK_THROWS_AS(stitch_and_fuse({}, 3, 1), std::invalid_argument);
  }

  TEST_CASE("segment features spread over their pixels") {
    const SuperpixelMap m = fo3d::test::block_labels(8, 4, 2, 1);
    FusionAccumulator acc(8, 4, 2);
    const std::vector<float> seg = {1, 2, 3, 4};
    acc.add_segments(CropSpec{{0, 0, 8, 4}, 0}, m, seg);
    const FeatureMap out = acc.finalize();
    CHECK(out.at(0, 0)[1] == 2.0f);
    CHECK(out.at(7, 3)[0] == 3.0f);
  }
}
