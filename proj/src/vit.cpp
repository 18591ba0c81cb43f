#include "fo3d/vit.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include "fo3d/errors.hpp"
#include "fo3d/keyvalue.hpp"
#include "fo3d/tensor.hpp"

namespace fs = std::filesystem;

namespace fo3d {

namespace {

RowMatrix layer_norm(const RowMatrix& x, const LayerNorm& ln, float eps) {
  RowMatrix y(x.rows(), x.cols());
  const float inv_n = 1.0f / static_cast<float>(x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const float mean = x.row(r).sum() * inv_n;
    const Eigen::RowVectorXf centered = x.row(r).array() - mean;
    const float var = centered.squaredNorm() * inv_n;
    const float inv_std = 1.0f / std::sqrt(var + eps);
    y.row(r) = (centered * inv_std).cwiseProduct(ln.weight.transpose()) + ln.bias.transpose();
  }
  return y;
}

RowMatrix apply_linear(const RowMatrix& x, const Linear& l) {
  RowMatrix y = x * l.weight.transpose();
  y.rowwise() += l.bias.transpose();
  return y;
}

void activate(RowMatrix& x, Activation act) {
  if (act == Activation::kQuickGelu) {
    x = x.array() * (1.0f / (1.0f + (-1.702f * x.array()).exp()));
  } else {
    x = x.unaryExpr([](float v) { return 0.5f * v * (1.0f + std::erf(v * 0.70710678118654752f)); });
  }
}

RowMatrix mlp(const RowMatrix& x, const BlockWeights& b, const ViTConfig& cfg) {
  RowMatrix hidden = apply_linear(layer_norm(x, b.ln2, cfg.ln_eps), b.mlp_in);
  activate(hidden, cfg.activation);
  return apply_linear(hidden, b.mlp_out);
}

// Standard multi-head self-attention of every row over every row.
RowMatrix full_attention(const RowMatrix& qkv, int width, int heads) {
  const int dh = width / heads;
  const Eigen::Index n = qkv.rows();
  const float scale = std::sqrt(static_cast<float>(dh));
  RowMatrix out(n, width);
  for (int h = 0; h < heads; ++h) {
    const RowMatrix q = qkv.middleCols(h * dh, dh);
    const RowMatrix k = qkv.middleCols(width + h * dh, dh);
    const RowMatrix v = qkv.middleCols(2 * width + h * dh, dh);
    RowMatrix scores = (q * k.transpose()) / scale;
    for (Eigen::Index r = 0; r < n; ++r) {
      const float m = scores.row(r).maxCoeff();
      scores.row(r) = (scores.row(r).array() - m).exp();
      scores.row(r) /= scores.row(r).sum();
    }
    out.middleCols(h * dh, dh) = scores * v;
  }
  return out;
}

Eigen::VectorXf vec_from(const Tensor& t, std::size_t n, const std::string& name) {
  if (t.dtype() != DType::kF32 || t.numel() != n) {
    throw ConfigError("tensor '" + name + "': expected " + std::to_string(n) + " f32 values");
  }
  const auto v = t.values<float>();
  return Eigen::Map<const Eigen::VectorXf>(v.data(), static_cast<Eigen::Index>(n));
}

RowMatrix mat_from(const Tensor& t, std::size_t rows, std::size_t cols, const std::string& name) {
  if (t.dtype() != DType::kF32 || t.numel() != rows * cols || t.dim(0) != rows) {
    std::ostringstream msg;
    msg << "tensor '" << name << "': expected f32 [" << rows << ", " << cols << "]";
    throw ConfigError(msg.str());
  }
  const auto v = t.values<float>();
  return Eigen::Map<const RowMatrix>(v.data(), static_cast<Eigen::Index>(rows),
                                     static_cast<Eigen::Index>(cols));
}

Tensor tensor_from(const Eigen::VectorXf& v) {
  return Tensor::from<float>({static_cast<std::size_t>(v.size())},
                             std::vector<float>(v.data(), v.data() + v.size()));
}

Tensor tensor_from(const RowMatrix& m) {
  return Tensor::from<float>({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())},
                             std::vector<float>(m.data(), m.data() + m.size()));
}

std::string activation_name(Activation a) { return a == Activation::kQuickGelu ? "quick_gelu" : "gelu"; }

}  // namespace

void ViTConfig::validate() const {
  if (image_size < 1 || patch_size < 1 || image_size % patch_size != 0) {
    throw ConfigError("vit: image_size must be a positive multiple of patch_size");
  }
  if (width < 1 || heads < 1 || width % heads != 0) {
    throw ConfigError("vit: width must be a positive multiple of heads");
  }
  if (layers < 0 || mlp_width < 1 || embed_dim < 1) throw ConfigError("vit: invalid layer sizes");
  for (float s : std) {
    if (!(s > 0.0f)) throw ConfigError("vit: normalization std must be > 0");
  }
}

void ViTWeights::validate() const {
  config.validate();
  const auto d = config.width;
  auto check = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("vit weights: bad shape for " + what);
  };
  check(patch_embed.weight.rows() == d && patch_embed.weight.cols() == config.patch_dim(), "patch_embed.weight");
  check(patch_embed.bias.size() == d, "patch_embed.bias");
  check(class_token.size() == d, "class_token");
  check(pos_embed.rows() == config.num_patches() + 1 && pos_embed.cols() == d, "pos_embed");
  check(ln_pre.has_value() == config.ln_pre, "ln_pre");
  check(static_cast<int>(blocks.size()) == config.layers, "layers");
  for (const auto& b : blocks) {
    check(b.qkv.weight.rows() == 3 * d && b.qkv.weight.cols() == d && b.qkv.bias.size() == 3 * d, "qkv");
    check(b.attn_out.weight.rows() == d && b.attn_out.weight.cols() == d, "attn_out");
    check(b.mlp_in.weight.rows() == config.mlp_width && b.mlp_in.weight.cols() == d, "mlp_in");
    check(b.mlp_out.weight.rows() == d && b.mlp_out.weight.cols() == config.mlp_width, "mlp_out");
    check(b.ln1.weight.size() == d && b.ln2.weight.size() == d, "layer norm");
  }
  check(ln_final.weight.size() == d, "ln_final");
  check(proj.rows() == config.embed_dim && proj.cols() == d, "proj");
}

ViTWeights load_vit_bundle(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.txt";
  if (!fs::exists(manifest_path)) throw ConfigError("weight bundle has no manifest: " + manifest_path.string());
  const KeyValueFile m = KeyValueFile::read(manifest_path);
  if (m.get_string("format") != "fo3d-vit-1") throw ConfigError("unsupported bundle format in " + manifest_path.string());

  ViTWeights w;
  ViTConfig& c = w.config;
  c.image_size = m.get_int("image_size");
  c.patch_size = m.get_int("patch_size");
  c.width = m.get_int("width");
  c.heads = m.get_int("heads");
  c.layers = m.get_int("layers");
  c.mlp_width = m.get_int("mlp_width");
  c.embed_dim = m.get_int("embed_dim");
  const std::string act = m.get("activation").value_or("quick_gelu");
  if (act == "quick_gelu") c.activation = Activation::kQuickGelu;
  else if (act == "gelu") c.activation = Activation::kGelu;
  else throw ConfigError("unknown activation '" + act + "'");
  if (m.has("ln_eps")) c.ln_eps = static_cast<float>(m.get_double("ln_eps"));
  c.ln_pre = m.has("tensor.ln_pre.weight");
  c.patch_bias = m.has("tensor.patch_embed.bias");
  const auto mean = m.get_doubles("mean");
  const auto stdv = m.get_doubles("std");
  if (mean.size() != 3 || stdv.size() != 3) throw ConfigError("mean/std must have 3 values");
  for (int i = 0; i < 3; ++i) {
    c.mean[static_cast<std::size_t>(i)] = static_cast<float>(mean[static_cast<std::size_t>(i)]);
    c.std[static_cast<std::size_t>(i)] = static_cast<float>(stdv[static_cast<std::size_t>(i)]);
  }
  c.validate();

  auto load = [&](const std::string& name) {
    const std::string file = m.get_string("tensor." + name);
    const fs::path path = dir / file;
    if (!fs::exists(path)) throw ConfigError("missing weight tensor file: " + path.string());
    return read_tensor(path);
  };
  const auto d = static_cast<std::size_t>(c.width);
  const auto hidden = static_cast<std::size_t>(c.mlp_width);
  const auto patch_dim = static_cast<std::size_t>(c.patch_dim());

  w.patch_embed.weight = mat_from(load("patch_embed.weight"), d, patch_dim, "patch_embed.weight");
  w.patch_embed.bias = c.patch_bias ? vec_from(load("patch_embed.bias"), d, "patch_embed.bias")
                                    : Eigen::VectorXf::Zero(static_cast<Eigen::Index>(d));
  w.class_token = vec_from(load("class_token"), d, "class_token");
  w.pos_embed = mat_from(load("pos_embed"), static_cast<std::size_t>(c.num_patches()) + 1, d, "pos_embed");
  if (c.ln_pre) {
    w.ln_pre = LayerNorm{vec_from(load("ln_pre.weight"), d, "ln_pre.weight"),
                         vec_from(load("ln_pre.bias"), d, "ln_pre.bias")};
  }
  for (int l = 0; l < c.layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    BlockWeights b;
    b.ln1 = {vec_from(load(p + "ln1.weight"), d, p + "ln1.weight"), vec_from(load(p + "ln1.bias"), d, p + "ln1.bias")};
    b.qkv = {mat_from(load(p + "qkv.weight"), 3 * d, d, p + "qkv.weight"), vec_from(load(p + "qkv.bias"), 3 * d, p + "qkv.bias")};
    b.attn_out = {mat_from(load(p + "attn_out.weight"), d, d, p + "attn_out.weight"),
                  vec_from(load(p + "attn_out.bias"), d, p + "attn_out.bias")};
    b.ln2 = {vec_from(load(p + "ln2.weight"), d, p + "ln2.weight"), vec_from(load(p + "ln2.bias"), d, p + "ln2.bias")};
    b.mlp_in = {mat_from(load(p + "mlp_in.weight"), hidden, d, p + "mlp_in.weight"),
                vec_from(load(p + "mlp_in.bias"), hidden, p + "mlp_in.bias")};
    b.mlp_out = {mat_from(load(p + "mlp_out.weight"), d, hidden, p + "mlp_out.weight"),
                 vec_from(load(p + "mlp_out.bias"), d, p + "mlp_out.bias")};
    w.blocks.push_back(std::move(b));
  }
  w.ln_final = {vec_from(load("ln_final.weight"), d, "ln_final.weight"), vec_from(load("ln_final.bias"), d, "ln_final.bias")};
  w.proj = mat_from(load("proj"), static_cast<std::size_t>(c.embed_dim), d, "proj");
  w.validate();
  return w;
}

void save_vit_bundle(const ViTWeights& w, const fs::path& dir) {
  w.validate();
  fs::create_directories(dir);
  const ViTConfig& c = w.config;
  std::ostringstream manifest;
  manifest << "# vision encoder weight bundle\n"
           << "format = fo3d-vit-1\n"
           << "image_size = " << c.image_size << "\n"
           << "patch_size = " << c.patch_size << "\n"
           << "width = " << c.width << "\n"
           << "heads = " << c.heads << "\n"
           << "layers = " << c.layers << "\n"
           << "mlp_width = " << c.mlp_width << "\n"
           << "embed_dim = " << c.embed_dim << "\n"
           << "activation = " << activation_name(c.activation) << "\n";
  manifest.precision(9);
  manifest << "ln_eps = " << c.ln_eps << "\n"
           << "mean = " << c.mean[0] << " " << c.mean[1] << " " << c.mean[2] << "\n"
           << "std = " << c.std[0] << " " << c.std[1] << " " << c.std[2] << "\n";

  auto save = [&](const std::string& name, const Tensor& t) {
    write_tensor(dir / (name + ".fot"), t);
    manifest << "tensor." << name << " = " << name << ".fot\n";
  };
  save("patch_embed.weight", tensor_from(w.patch_embed.weight));
  if (c.patch_bias) save("patch_embed.bias", tensor_from(w.patch_embed.bias));
  save("class_token", tensor_from(w.class_token));
  save("pos_embed", tensor_from(w.pos_embed));
  if (w.ln_pre) {
    save("ln_pre.weight", tensor_from(w.ln_pre->weight));
    save("ln_pre.bias", tensor_from(w.ln_pre->bias));
  }
  for (int l = 0; l < c.layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    const BlockWeights& b = w.blocks[static_cast<std::size_t>(l)];
    save(p + "ln1.weight", tensor_from(b.ln1.weight));
    save(p + "ln1.bias", tensor_from(b.ln1.bias));
    save(p + "qkv.weight", tensor_from(b.qkv.weight));
    save(p + "qkv.bias", tensor_from(b.qkv.bias));
    save(p + "attn_out.weight", tensor_from(b.attn_out.weight));
    save(p + "attn_out.bias", tensor_from(b.attn_out.bias));
    save(p + "ln2.weight", tensor_from(b.ln2.weight));
    save(p + "ln2.bias", tensor_from(b.ln2.bias));
    save(p + "mlp_in.weight", tensor_from(b.mlp_in.weight));
    save(p + "mlp_in.bias", tensor_from(b.mlp_in.bias));
    save(p + "mlp_out.weight", tensor_from(b.mlp_out.weight));
    save(p + "mlp_out.bias", tensor_from(b.mlp_out.bias));
  }
  save("ln_final.weight", tensor_from(w.ln_final.weight));
  save("ln_final.bias", tensor_from(w.ln_final.bias));
  save("proj", tensor_from(w.proj));

  std::ofstream os(dir / "manifest.txt", std::ios::trunc);
  if (!os) throw DataError("cannot write manifest in " + dir.string());
  os << manifest.str();
}

ViTWeights random_vit_weights(const ViTConfig& config, std::uint64_t seed, float scale) {
  config.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  auto randm = [&](Eigen::Index r, Eigen::Index c, float s) {
    RowMatrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = s * normal(rng);
    return m;
  };
  auto randv = [&](Eigen::Index n, float s, float offset) {
    Eigen::VectorXf v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = offset + s * normal(rng);
    return v;
  };
  const Eigen::Index d = config.width;
  ViTWeights w;
  w.config = config;
  w.patch_embed = {randm(d, config.patch_dim(), scale), config.patch_bias ? randv(d, scale, 0.0f) : Eigen::VectorXf::Zero(d)};
  w.class_token = randv(d, 1.0f, 0.0f);
  w.pos_embed = randm(config.num_patches() + 1, d, 1.0f);
  if (config.ln_pre) w.ln_pre = LayerNorm{randv(d, 0.1f, 1.0f), randv(d, 0.1f, 0.0f)};
  for (int l = 0; l < config.layers; ++l) {
    BlockWeights b;
    b.ln1 = {randv(d, 0.1f, 1.0f), randv(d, 0.1f, 0.0f)};
    b.qkv = {randm(3 * d, d, 1.0f / std::sqrt(static_cast<float>(d))), randv(3 * d, 0.1f, 0.0f)};
    b.attn_out = {randm(d, d, 1.0f / std::sqrt(static_cast<float>(d))), randv(d, 0.1f, 0.0f)};
    b.ln2 = {randv(d, 0.1f, 1.0f), randv(d, 0.1f, 0.0f)};
    b.mlp_in = {randm(config.mlp_width, d, 1.0f / std::sqrt(static_cast<float>(d))), randv(config.mlp_width, 0.1f, 0.0f)};
    b.mlp_out = {randm(d, config.mlp_width, 1.0f / std::sqrt(static_cast<float>(config.mlp_width))), randv(d, 0.1f, 0.0f)};
    w.blocks.push_back(std::move(b));
  }
  w.ln_final = {randv(d, 0.1f, 1.0f), randv(d, 0.1f, 0.0f)};
  w.proj = randm(config.embed_dim, d, 1.0f / std::sqrt(static_cast<float>(d)));
  return w;
}

std::vector<float> preprocess_crop(const RgbImage& crop, const ViTConfig& config) {
  if (crop.width < 1 || crop.height < 1) throw std::invalid_argument("preprocess_crop: empty crop");
  const int s = config.image_size;
  std::vector<float> chw(static_cast<std::size_t>(3) * s * s);
  const double sx = static_cast<double>(crop.width) / s;
  const double sy = static_cast<double>(crop.height) / s;
  for (int y = 0; y < s; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(crop.height - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, crop.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < s; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(crop.width - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, crop.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const double top = (1.0 - wx) * crop.at(x0, y0)[c] + wx * crop.at(x1, y0)[c];
        const double bottom = (1.0 - wx) * crop.at(x0, y1)[c] + wx * crop.at(x1, y1)[c];
        const double v = ((1.0 - wy) * top + wy * bottom) / 255.0;
        chw[(static_cast<std::size_t>(c) * s + y) * s + x] =
            static_cast<float>((v - config.mean[static_cast<std::size_t>(c)]) / config.std[static_cast<std::size_t>(c)]);
      }
    }
  }
  return chw;
}

TokenState patchify_and_embed(std::span<const float> chw, const ViTWeights& weights, int n_locals) {
  const ViTConfig& c = weights.config;
  const int s = c.image_size, p = c.patch_size, g = c.grid();
  if (chw.size() != static_cast<std::size_t>(3) * s * s) {
    throw std::invalid_argument("patchify_and_embed: expected a 3 x " + std::to_string(s) + " x " +
                                std::to_string(s) + " input");
  }
  if (n_locals < 0) throw std::invalid_argument("patchify_and_embed: n_locals must be >= 0");

  RowMatrix patches(c.num_patches(), c.patch_dim());
  for (int gy = 0; gy < g; ++gy) {
    for (int gx = 0; gx < g; ++gx) {
      float* dst = patches.row(gy * g + gx).data();
      for (int ch = 0; ch < 3; ++ch) {
        for (int ky = 0; ky < p; ++ky) {
          for (int kx = 0; kx < p; ++kx) {
            *dst++ = chw[(static_cast<std::size_t>(ch) * s + gy * p + ky) * s + gx * p + kx];
          }
        }
      }
    }
  }

  TokenState state;
  state.main.resize(c.num_patches() + 1, c.width);
  state.main.row(0) = weights.class_token.transpose();
  state.main.bottomRows(c.num_patches()) = apply_linear(patches, weights.patch_embed);
  state.main += weights.pos_embed;
  if (weights.ln_pre) state.main = layer_norm(state.main, *weights.ln_pre, c.ln_eps);
  state.locals = state.main.row(0).replicate(n_locals, 1);
  return state;
}

RowMatrix restricted_attention(const RowMatrix& queries, const RowMatrix& keys,
                               const RowMatrix& values,
                               const std::vector<std::vector<std::int32_t>>& key_sets, int heads,
                               std::vector<std::vector<float>>* weights_out) {
  const Eigen::Index width = queries.cols();
  if (heads < 1 || width % heads != 0) throw std::invalid_argument("restricted_attention: bad head count");
  if (keys.cols() != width || values.cols() != width || keys.rows() != values.rows()) {
    throw std::invalid_argument("restricted_attention: query/key/value shapes differ");
  }
  if (static_cast<Eigen::Index>(key_sets.size()) != queries.rows()) {
    throw std::invalid_argument("restricted_attention: one key set per query required");
  }
  const int dh = static_cast<int>(width / heads);
  const float scale = std::sqrt(static_cast<float>(dh));
  RowMatrix out = RowMatrix::Zero(queries.rows(), width);
  if (weights_out) weights_out->assign(key_sets.size(), {});

  std::vector<float> w;
  for (Eigen::Index j = 0; j < queries.rows(); ++j) {
    const auto& set = key_sets[static_cast<std::size_t>(j)];
    if (set.empty()) throw std::invalid_argument("restricted_attention: empty key set");
    for (std::int32_t i : set) {
      if (i < 0 || i >= keys.rows()) throw std::invalid_argument("restricted_attention: key index out of range");
    }
    w.resize(set.size());
    for (int h = 0; h < heads; ++h) {
      const auto q = queries.row(j).segment(h * dh, dh);
      float m = -std::numeric_limits<float>::infinity();
      for (std::size_t t = 0; t < set.size(); ++t) {
        w[t] = q.dot(keys.row(set[t]).segment(h * dh, dh)) / scale;
        m = std::max(m, w[t]);
      }
      float total = 0.0f;
      for (float& x : w) {
        x = std::exp(x - m);
        total += x;
      }
      auto o = out.row(j).segment(h * dh, dh);
      for (std::size_t t = 0; t < set.size(); ++t) {
        w[t] /= total;
        o += w[t] * values.row(set[t]).segment(h * dh, dh);
      }
      if (weights_out) {
        auto& dst = (*weights_out)[static_cast<std::size_t>(j)];
        dst.insert(dst.end(), w.begin(), w.end());
      }
    }
  }
  return out;
}

TokenState attention_block_restricted(const TokenState& state, const PatchAssignment& assignment,
                                      const BlockWeights& block, const ViTConfig& config) {
  const int d = config.width;
  const Eigen::Index n_locals = state.locals.rows();
  if (n_locals > 0 && static_cast<Eigen::Index>(assignment.token_sets.size()) != n_locals) {
    throw std::invalid_argument("attention block: one token set per local token required");
  }

  TokenState next;
  // Global + patches: unmodified encoder block.
  const RowMatrix qkv = apply_linear(layer_norm(state.main, block.ln1, config.ln_eps), block.qkv);
  next.main = state.main + apply_linear(full_attention(qkv, d, config.heads), block.attn_out);
  next.main += mlp(next.main, block, config);

  next.locals = state.locals;
  if (n_locals > 0) {
    // Queries from the local tokens; keys/values are the patch rows computed above.
    const Linear q_proj{block.qkv.weight.topRows(d), block.qkv.bias.head(d)};
    const RowMatrix q = apply_linear(layer_norm(state.locals, block.ln1, config.ln_eps), q_proj);
    const RowMatrix keys = qkv.block(1, d, qkv.rows() - 1, d);
    const RowMatrix values = qkv.block(1, 2 * d, qkv.rows() - 1, d);
    next.locals += apply_linear(restricted_attention(q, keys, values, assignment.token_sets, config.heads),
                                block.attn_out);
    next.locals += mlp(next.locals, block, config);
  }
  return next;
}

LocalFeatures encode_tokens(TokenState state, const PatchAssignment& assignment,
                            const ViTWeights& weights, ForwardTrace* trace) {
  if (trace) {
    trace->clear();
    trace->push_back(state);
  }
  for (const BlockWeights& b : weights.blocks) {
    state = attention_block_restricted(state, assignment, b, weights.config);
    if (trace) trace->push_back(state);
  }
  LocalFeatures out;
  const RowMatrix g = layer_norm(state.main.topRows(1), weights.ln_final, weights.config.ln_eps);
  out.global = g * weights.proj.transpose();
  if (state.locals.rows() > 0) {
    out.superpixel = layer_norm(state.locals, weights.ln_final, weights.config.ln_eps) * weights.proj.transpose();
  } else {
    out.superpixel.resize(0, weights.config.embed_dim);
  }
  return out;
}

LocalFeatures forward_with_local_tokens(const RgbImage& crop, const SuperpixelMap& spmap,
                                        const ViTWeights& weights, ForwardTrace* trace) {
  if (spmap.width != crop.width || spmap.height != crop.height) {
    throw std::invalid_argument("forward_with_local_tokens: super-pixel map size differs from crop");
  }
  const auto chw = preprocess_crop(crop, weights.config);
  const PatchAssignment assignment = assign_patches(spmap, weights.config.grid());
  TokenState state = patchify_and_embed(chw, weights, spmap.n_segments);
  return encode_tokens(std::move(state), assignment, weights, trace);
}

FeatureMap broadcast_superpixel_features(const RowMatrix& features, const SuperpixelMap& spmap) {
  const int c = static_cast<int>(features.cols());
  FeatureMap out(spmap.width, spmap.height, c);
  for (int y = 0; y < spmap.height; ++y) {
    for (int x = 0; x < spmap.width; ++x) {
      const std::int32_t l = spmap.at(x, y);
      if (l < 0 || l >= features.rows()) throw std::logic_error("broadcast: label out of range");
      std::copy(features.row(l).data(), features.row(l).data() + c, out.at(x, y).data());
    }
  }
  return out;
}

}  // namespace fo3d
