#include <doctest.h>

#include <cmath>
#include <cstring>
#include <random>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "fo3d/errors.hpp"
#include "fo3d/synthetic.hpp"
#include "fo3d/vit.hpp"

using namespace fo3d;
using fo3d::test::LD;

namespace {

using Rows = std::vector<std::vector<LD>>;

Rows ln_ref(const Rows& x, const LayerNorm& ln, LD eps) {
  Rows y = x;
  for (auto& r : y) {
    LD mean = 0, var = 0;
    for (LD v : r) mean += v;
    mean /= static_cast<LD>(r.size());
    for (LD v : r) var += (v - mean) * (v - mean);
    var /= static_cast<LD>(r.size());
    for (std::size_t j = 0; j < r.size(); ++j) {
      r[j] = (r[j] - mean) / std::sqrt(var + eps) * ln.weight(static_cast<Eigen::Index>(j)) + ln.bias(static_cast<Eigen::Index>(j));
    }
  }
  return y;
}

Rows linear_ref(const Rows& x, const RowMatrix& w, const Eigen::VectorXf* b) {
  Rows y(x.size(), std::vector<LD>(static_cast<std::size_t>(w.rows()), 0));
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (Eigen::Index o = 0; o < w.rows(); ++o) {
      LD s = b ? static_cast<LD>((*b)(o)) : 0;
      for (Eigen::Index j = 0; j < w.cols(); ++j) s += static_cast<LD>(w(o, j)) * x[i][static_cast<std::size_t>(j)];
      y[i][static_cast<std::size_t>(o)] = s;
    }
  }
  return y;
}

// softmax(q k / sqrt(dh)) v per head, each query over its own key rows
Rows attend_ref(const Rows& q, const Rows& k, const Rows& v, const std::vector<std::vector<int>>& sets, int heads) {
  const std::size_t d = q[0].size(), dh = d / static_cast<std::size_t>(heads);
  Rows out(q.size(), std::vector<LD>(d, 0));
  for (std::size_t i = 0; i < q.size(); ++i) {
    for (std::size_t h = 0; h < static_cast<std::size_t>(heads); ++h) {
      std::vector<LD> s;
      LD z = 0;
      for (int j : sets[i]) {
        LD dot = 0;
        for (std::size_t t = 0; t < dh; ++t) dot += q[i][h * dh + t] * k[static_cast<std::size_t>(j)][h * dh + t];
        s.push_back(std::exp(dot / std::sqrt(static_cast<LD>(dh))));
        z += s.back();
      }
      for (std::size_t t = 0; t < dh; ++t) {
        LD acc = 0;
        for (std::size_t m = 0; m < s.size(); ++m) acc += s[m] / z * v[static_cast<std::size_t>(sets[i][m])][h * dh + t];
        out[i][h * dh + t] = acc;
      }
    }
  }
  return out;
}

Rows add(Rows a, const Rows& b) {
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < a[i].size(); ++j) a[i][j] += b[i][j];
  }
  return a;
}

Rows mlp_ref(const Rows& x, const BlockWeights& b, const ViTConfig& c) {
  Rows h = linear_ref(ln_ref(x, b.ln2, c.ln_eps), b.mlp_in.weight, &b.mlp_in.bias);
  for (auto& r : h) {
    for (auto& v : r) v = c.activation == Activation::kQuickGelu ? v / (1 + std::exp(-1.702L * v)) : 0.5L * v * (1 + std::erf(v / std::sqrt(2.0L)));
  }
  return linear_ref(h, b.mlp_out.weight, &b.mlp_out.bias);
}

struct RefOut {
  std::vector<LD> global;
  Rows locals;
};

// Whole encoder in extended precision: global/patch rows attend to everything, local
// rows attend only to their patch sets.
RefOut vit_ref(const std::vector<float>& chw, const ViTWeights& w, const PatchAssignment& a, int n_locals) {
  const ViTConfig& c = w.config;
  const int s = c.image_size, p = c.patch_size, g = c.grid(), d = c.width;
  Rows x(static_cast<std::size_t>(c.num_patches() + 1), std::vector<LD>(static_cast<std::size_t>(d)));
  for (int j = 0; j < d; ++j) x[0][static_cast<std::size_t>(j)] = w.class_token(j);
  for (int gy = 0; gy < g; ++gy) {
    for (int gx = 0; gx < g; ++gx) {
      std::vector<LD> patch;
      for (int ch = 0; ch < 3; ++ch) {
        for (int ky = 0; ky < p; ++ky) {
          for (int kx = 0; kx < p; ++kx) patch.push_back(chw[(static_cast<std::size_t>(ch) * s + gy * p + ky) * s + gx * p + kx]);
        }
      }
      x[static_cast<std::size_t>(1 + gy * g + gx)] = linear_ref({patch}, w.patch_embed.weight, &w.patch_embed.bias)[0];
    }
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (int j = 0; j < d; ++j) x[i][static_cast<std::size_t>(j)] += w.pos_embed(static_cast<Eigen::Index>(i), j);
  }
  if (w.ln_pre) x = ln_ref(x, *w.ln_pre, c.ln_eps);
  Rows loc(static_cast<std::size_t>(n_locals), x[0]);
  std::vector<std::vector<int>> all(x.size());
  for (auto& set : all) {
    for (int i = 0; i < static_cast<int>(x.size()); ++i) set.push_back(i);
  }
  std::vector<std::vector<int>> sets;
  for (int l = 0; l < n_locals; ++l) sets.emplace_back(a.token_sets[static_cast<std::size_t>(l)].begin(), a.token_sets[static_cast<std::size_t>(l)].end());
  for (const BlockWeights& b : w.blocks) {
    const Rows qkv = linear_ref(ln_ref(x, b.ln1, c.ln_eps), b.qkv.weight, &b.qkv.bias);
    Rows q, k, v;
    for (const auto& r : qkv) {
      q.emplace_back(r.begin(), r.begin() + d);
      k.emplace_back(r.begin() + d, r.begin() + 2 * d);
      v.emplace_back(r.begin() + 2 * d, r.end());
    }
    if (n_locals > 0) {
      const Rows lq = linear_ref(ln_ref(loc, b.ln1, c.ln_eps), RowMatrix(b.qkv.weight.topRows(d)), nullptr);
      Rows lqb = lq;
      for (auto& r : lqb) {
        for (int j = 0; j < d; ++j) r[static_cast<std::size_t>(j)] += b.qkv.bias(j);
      }
      const Rows pk(k.begin() + 1, k.end()), pv(v.begin() + 1, v.end());
      loc = add(loc, linear_ref(attend_ref(lqb, pk, pv, sets, c.heads), b.attn_out.weight, &b.attn_out.bias));
      loc = add(loc, mlp_ref(loc, b, c));
    }
    x = add(x, linear_ref(attend_ref(q, k, v, all, c.heads), b.attn_out.weight, &b.attn_out.bias));
    x = add(x, mlp_ref(x, b, c));
  }
  RefOut out;
  out.global = linear_ref(ln_ref({x[0]}, w.ln_final, c.ln_eps), w.proj, nullptr)[0];
  if (n_locals > 0) out.locals = linear_ref(ln_ref(loc, w.ln_final, c.ln_eps), w.proj, nullptr);
  return out;
}

double max_diff(const Eigen::RowVectorXf& a, const std::vector<LD>& b) {
  double m = 0;
  for (Eigen::Index i = 0; i < a.size(); ++i) m = std::max(m, static_cast<double>(std::fabs(a(i) - b[static_cast<std::size_t>(i)])));
  return m;
}

bool bit_equal(const RowMatrix& a, const RowMatrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() && std::memcmp(a.data(), b.data(), sizeof(float) * a.size()) == 0;
}

}  // namespace

TEST_SUITE("vit") {
  TEST_CASE("singleton key set returns that value row") {
    RowMatrix q = RowMatrix::Random(1, 4), k = RowMatrix::Random(3, 4), v = RowMatrix::Random(3, 4);
    const RowMatrix out = restricted_attention(q, k, v, {{2}}, 2);
    CHECK((out.row(0) - v.row(2)).cwiseAbs().maxCoeff() == 0.0f);
  }

  TEST_CASE("equal scores average the value rows") {
    RowMatrix q = RowMatrix::Zero(1, 4), k = RowMatrix::Random(3, 4), v = RowMatrix::Random(3, 4);
    const RowMatrix out = restricted_attention(q, k, v, {{0, 1, 2}}, 1);
    const Eigen::RowVectorXf mean = v.colwise().mean();
    CHECK((out.row(0) - mean).cwiseAbs().maxCoeff() < 1e-6f);
  }

  TEST_CASE("two keys with scores 1 and 0 weigh e/(e+1) and 1/(e+1)") {
    // dh = 4, so q.k / 2 = 1 needs q.k = 2
    RowMatrix q(1, 4), k(2, 4), v(2, 4);
    q << 1, 1, 0, 0;
    k << 1, 1, 0, 0, 0, 0, 1, 1;
    v << 1, 0, 0, 0, 0, 1, 0, 0;
    std::vector<std::vector<float>> weights;
    const RowMatrix out = restricted_attention(q, k, v, {{0, 1}}, 1, &weights);
    const LD e = std::exp(1.0L);
    CHECK(std::fabs(weights[0][0] - e / (e + 1)) < 1e-6);
    CHECK(std::fabs(weights[0][1] - 1 / (e + 1)) < 1e-6);
    const auto ref = fo3d::test::attention_oracle(q, k, v, {{0, 1}}, 1);
    for (int t = 0; t < 4; ++t) CHECK(std::fabs(ref[0][static_cast<std::size_t>(t)] - out(0, t)) < 1e-6);
  }

  TEST_CASE("attention weights sum to one per head") {
    std::mt19937 rng(5);
    std::normal_distribution<float> nd(0.0f, 3.0f);
    RowMatrix q(6, 12), k(20, 12), v(20, 12);
    for (auto* m : {&q, &k, &v}) {
      for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = nd(rng);
    }
    std::vector<std::vector<std::int32_t>> sets = {{0}, {1, 2}, {3, 4, 5, 19}, {7, 8}, {0, 10, 11}, {12, 13, 14, 15, 16}};
    std::vector<std::vector<float>> weights;
    restricted_attention(q, k, v, sets, 3, &weights);
    REQUIRE(weights.size() == 6);
    for (std::size_t j = 0; j < 6; ++j) {
      REQUIRE(weights[j].size() == 3 * sets[j].size());
      for (std::size_t h = 0; h < 3; ++h) {
        double sum = 0;
        for (std::size_t t = 0; t < sets[j].size(); ++t) sum += weights[j][h * sets[j].size() + t];
        CHECK(std::fabs(sum - 1.0) < 1e-6);
      }
    }
  }

  TEST_CASE("bad key sets are rejected") {
    RowMatrix q = RowMatrix::Zero(1, 4), k = RowMatrix::Zero(2, 4);
    CHECK_THROWS_AS(restricted_attention(q, k, k, {{}}, 1), std::invalid_argument);
    CHECK_THROWS_AS(restricted_attention(q, k, k, {{2}}, 1), std::invalid_argument);
    CHECK_THROWS_AS(restricted_attention(q, k, k, {{0}, {1}}, 1), std::invalid_argument);
    CHECK_THROWS_AS(restricted_attention(q, k, k, {{0}}, 3), std::invalid_argument);
  }

  TEST_CASE("zero image and zero patch weights leave the positional embeddings") {
    ViTWeights w = random_vit_weights(fo3d::test::toy_vit_config(), 3, 0.1f);
    w.ln_pre.reset();
    w.patch_embed.weight.setZero();
    w.patch_embed.bias.setZero();
    const std::vector<float> zero(static_cast<std::size_t>(3 * 32 * 32), 0.0f);
    const TokenState s = patchify_and_embed(zero, w, 0);
    CHECK(bit_equal(RowMatrix(s.patches()), RowMatrix(w.pos_embed.bottomRows(w.config.num_patches()))));
    CHECK(s.locals.rows() == 0);
  }

  TEST_CASE("local tokens start as the global token") {
    const ViTWeights w = random_vit_weights(fo3d::test::toy_vit_config(), 4, 0.1f);
    const auto chw = preprocess_crop(fo3d::test::random_image(32, 32, 1), w.config);
    const TokenState s = patchify_and_embed(chw, w, 3);
    REQUIRE(s.locals.rows() == 3);
    for (int i = 0; i < 3; ++i) CHECK(bit_equal(RowMatrix(s.locals.row(i)), RowMatrix(s.main.row(0))));
    CHECK_THROWS_AS(patchify_and_embed(std::vector<float>(10, 0.0f), w, 0), std::invalid_argument);
    CHECK_THROWS_AS(patchify_and_embed(chw, w, -1), std::invalid_argument);
  }

  TEST_CASE("global and patch tokens do not depend on local tokens") {
    for (unsigned seed = 0; seed < 4; ++seed) {
      const ViTWeights w = random_vit_weights(fo3d::test::toy_vit_config(), seed, 0.3f);
      const RgbImage img = fo3d::test::random_image(40, 40, seed);
      const auto chw = preprocess_crop(img, w.config);
      ForwardTrace base;
      const LocalFeatures f0 = encode_tokens(patchify_and_embed(chw, w, 0), PatchAssignment{w.config.grid(), {}, {}, {}}, w, &base);
      CHECK(f0.superpixel.rows() == 0);
      for (int k : {1, 5, 50}) {
        const SuperpixelMap sp = slic(img, {k, 10.0, 10});
        ForwardTrace t;
        const LocalFeatures f = forward_with_local_tokens(img, sp, w, &t);
        REQUIRE(t.size() == base.size());
        for (std::size_t l = 0; l < t.size(); ++l) CHECK(bit_equal(t[l].main, base[l].main));
        CHECK(std::memcmp(f.global.data(), f0.global.data(), sizeof(float) * f0.global.size()) == 0);
        CHECK(f.superpixel.rows() == sp.n_segments);
      }
    }
  }

  TEST_CASE("encoder matches the extended-precision reference") {
    for (Activation act : {Activation::kQuickGelu, Activation::kGelu}) {
      ViTConfig c = fo3d::test::toy_vit_config();
      c.activation = act;
      c.patch_bias = true;
      const ViTWeights w = random_vit_weights(c, 17, 0.2f);
      const RgbImage img = fo3d::test::random_image(48, 40, 9);
      const SuperpixelMap sp = fo3d::test::block_labels(48, 40, 3, 2);
      const auto chw = preprocess_crop(img, c);
      const PatchAssignment a = assign_patches(sp, c.grid());
      const LocalFeatures f = forward_with_local_tokens(img, sp, w);
      const RefOut ref = vit_ref(chw, w, a, sp.n_segments);
      CHECK(max_diff(f.global, ref.global) < 1e-5);
      for (int l = 0; l < sp.n_segments; ++l) CHECK(max_diff(f.superpixel.row(l), ref.locals[static_cast<std::size_t>(l)]) < 1e-5);
    }
  }

  TEST_CASE("relabeling super-pixels permutes the output rows") {
    const ViTWeights w = random_vit_weights(fo3d::test::toy_vit_config(), 8, 0.2f);
    const RgbImage img = fo3d::test::random_image(32, 32, 4);
    SuperpixelMap sp = fo3d::test::block_labels(32, 32, 2, 2);
    const LocalFeatures a = forward_with_local_tokens(img, sp, w);
    const std::vector<std::int32_t> perm = {2, 0, 3, 1};
    for (auto& l : sp.labels) l = perm[static_cast<std::size_t>(l)];
    compute_centroids(sp);
    const LocalFeatures b = forward_with_local_tokens(img, sp, w);
    for (int i = 0; i < 4; ++i) CHECK(bit_equal(RowMatrix(a.superpixel.row(i)), RowMatrix(b.superpixel.row(perm[static_cast<std::size_t>(i)]))));
  }

  TEST_CASE("identical token sets give identical features") {
    const ViTWeights w = random_vit_weights(fo3d::test::toy_vit_config(), 2, 0.2f);
    const auto chw = preprocess_crop(fo3d::test::random_image(32, 32, 6), w.config);
    PatchAssignment a = assign_patches(fo3d::test::block_labels(32, 32, 2, 1), w.config.grid());
    a.token_sets.push_back(a.token_sets[0]);
    a.centroid_fallback.push_back(0);
    const LocalFeatures f = encode_tokens(patchify_and_embed(chw, w, 3), a, w);
    CHECK(bit_equal(RowMatrix(f.superpixel.row(0)), RowMatrix(f.superpixel.row(2))));
  }

  TEST_CASE("preprocessing: same-size copy and normalization") {
    ViTConfig c = fo3d::test::toy_vit_config();
    c.mean = {0.5f, 0.25f, 0.0f};
    c.std = {0.5f, 0.25f, 1.0f};
    const RgbImage img = fo3d::test::constant_image(32, 32, 255, 0, 51);
    const auto chw = preprocess_crop(img, c);
    CHECK(chw[0] == doctest::Approx(1.0));
    CHECK(chw[32 * 32] == doctest::Approx(-1.0));
    CHECK(chw[2 * 32 * 32] == doctest::Approx(0.2));
    // upsampling a constant crop stays constant
    const auto up = preprocess_crop(fo3d::test::constant_image(7, 5, 255, 0, 51), c);
    for (std::size_t i = 0; i < 32 * 32; ++i) REQUIRE(up[i] == chw[i]);
    CHECK_THROWS_AS(preprocess_crop(RgbImage(0, 0), c), std::invalid_argument);
  }

  TEST_CASE("broadcast paints each segment with its row") {
    const SuperpixelMap one = fo3d::test::block_labels(6, 4, 1, 1);
    RowMatrix f1(1, 2);
    f1 << 0.5f, -1.0f;
    const FeatureMap m1 = broadcast_superpixel_features(f1, one);
    for (int y = 0; y < 4; ++y) {
      for (int x = 0; x < 6; ++x) CHECK(m1.at(x, y)[1] == -1.0f);
    }
    const SuperpixelMap two = fo3d::test::block_labels(6, 4, 2, 1);
    const RowMatrix e = RowMatrix::Identity(2, 2);
    const FeatureMap m2 = broadcast_superpixel_features(e, two);
    CHECK(m2.at(0, 0)[0] == 1.0f);
    CHECK(m2.at(5, 3)[1] == 1.0f);
    // per-segment mean of the broadcast map recovers the features
    std::vector<double> sum(4, 0.0);
    std::vector<int> cnt(2, 0);
    for (int y = 0; y < 4; ++y) {
      for (int x = 0; x < 6; ++x) {
        const int l = two.at(x, y);
        ++cnt[static_cast<std::size_t>(l)];
        for (int c = 0; c < 2; ++c) sum[static_cast<std::size_t>(l * 2 + c)] += m2.at(x, y)[static_cast<std::size_t>(c)];
      }
    }
    for (int l = 0; l < 2; ++l) {
      for (int c = 0; c < 2; ++c) CHECK(sum[static_cast<std::size_t>(l * 2 + c)] / cnt[static_cast<std::size_t>(l)] == e(l, c));
    }
  }

  TEST_CASE("weight bundle round trip") {
    fo3d::test::TempDir dir;
    ViTConfig c = fo3d::test::toy_vit_config();
    c.activation = Activation::kGelu;
    const ViTWeights w = random_vit_weights(c, 12, 0.1f);
    save_vit_bundle(w, dir / "b");
    const ViTWeights back = load_vit_bundle(dir / "b");
    CHECK(back.config.layers == c.layers);
    CHECK(back.config.activation == Activation::kGelu);
    CHECK(back.config.mean == c.mean);
    CHECK(bit_equal(back.pos_embed, w.pos_embed));
    CHECK(bit_equal(back.blocks[2].mlp_out.weight, w.blocks[2].mlp_out.weight));
    CHECK(bit_equal(back.proj, w.proj));
    const auto chw = preprocess_crop(fo3d::test::random_image(32, 32, 3), c);
    const PatchAssignment none{c.grid(), {}, {}, {}};
    CHECK(encode_tokens(patchify_and_embed(chw, back, 0), none, back).global ==
          encode_tokens(patchify_and_embed(chw, w, 0), none, w).global);
  }

  TEST_CASE("broken bundles are config errors") {
    fo3d::test::TempDir dir;
    CHECK_THROWS_AS(load_vit_bundle(dir / "none"), ConfigError);
    const ViTWeights w = random_vit_weights(fo3d::test::toy_vit_config(), 1, 0.1f);
    save_vit_bundle(w, dir / "b");
    std::filesystem::remove(dir / "b" / "proj.fot");
    CHECK_THROWS_AS(load_vit_bundle(dir / "b"), ConfigError);
    ViTConfig bad = fo3d::test::toy_vit_config();
    bad.heads = 5;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
  }

  TEST_CASE("planted encoder maps constant colors to separable globals") {
    const ViTWeights w = planted_vit_weights();
    const std::vector<std::array<std::uint8_t, 3>> colors = {{220, 40, 40}, {40, 200, 60}, {40, 60, 220}};
    const Tensor emb = planted_class_embeddings(w, colors);
    REQUIRE(emb.shape() == Shape{3, static_cast<std::size_t>(w.config.embed_dim)});
    // a crop of one color is closest to its own class
    for (std::size_t k = 0; k < colors.size(); ++k) {
      const RgbImage img = fo3d::test::constant_image(32, 32, colors[k][0], colors[k][1], colors[k][2]);
      const SuperpixelMap sp = fo3d::test::block_labels(32, 32, 1, 1);
      const LocalFeatures f = forward_with_local_tokens(img, sp, w);
      const auto v = emb.values<float>();
      std::size_t best = 0;
      double best_cos = -2;
      for (std::size_t j = 0; j < colors.size(); ++j) {
        double dot = 0, a = 0, b = 0;
        for (int t = 0; t < w.config.embed_dim; ++t) {
          const double x = f.superpixel(0, t), y = v[j * static_cast<std::size_t>(w.config.embed_dim) + static_cast<std::size_t>(t)];
          dot += x * y;
          a += x * x;
          b += y * y;
        }
        const double cos = dot / std::sqrt(a * b);
        if (cos > best_cos) {
          best_cos = cos;
          best = j;
        }
      }
      CHECK(best == k);
    }
  }
}
