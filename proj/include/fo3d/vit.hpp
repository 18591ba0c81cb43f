// Vision transformer encoder with local classification tokens.
//
// The global token and the patch tokens follow the unmodified encoder. Each local
// token starts as a copy of the global token's input embedding and attends only to
// the patches assigned to its super-pixel; local tokens never serve as keys or
// values, so adding them leaves every global/patch activation bit-identical.

#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fo3d/feature_map.hpp"
#include "fo3d/image.hpp"
#include "fo3d/regions.hpp"
#include "fo3d/superpixel.hpp"

namespace fo3d {

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Activation { kQuickGelu, kGelu };

struct ViTConfig {
  int image_size = 224;
  int patch_size = 16;
  int width = 768;
  int heads = 12;
  int layers = 12;
  int mlp_width = 3072;
  int embed_dim = 512;
  Activation activation = Activation::kQuickGelu;
  float ln_eps = 1e-5f;
  bool ln_pre = true;
  bool patch_bias = false;
  std::array<float, 3> mean = {0.48145466f, 0.4578275f, 0.40821073f};
  std::array<float, 3> std = {0.26862954f, 0.26130258f, 0.27577711f};

  int grid() const { return image_size / patch_size; }
  int num_patches() const { return grid() * grid(); }
  int head_dim() const { return width / heads; }
  int patch_dim() const { return 3 * patch_size * patch_size; }

  /// Throws ConfigError when dimensions are inconsistent.
  void validate() const;
};

struct LayerNorm {
  Eigen::VectorXf weight;
  Eigen::VectorXf bias;
};

/// y = x W^T + b, W stored out x in.
struct Linear {
  RowMatrix weight;
  Eigen::VectorXf bias;
};

struct BlockWeights {
  LayerNorm ln1;
  Linear qkv;  // rows [0, d) query, [d, 2d) key, [2d, 3d) value
  Linear attn_out;
  LayerNorm ln2;
  Linear mlp_in;
  Linear mlp_out;
};

struct ViTWeights {
  ViTConfig config;
  Linear patch_embed;            // d x (3 * p * p), input ordered (channel, row, col)
  Eigen::VectorXf class_token;   // d
  RowMatrix pos_embed;           // (M + 1) x d, row 0 belongs to the class token
  std::optional<LayerNorm> ln_pre;
  std::vector<BlockWeights> blocks;
  LayerNorm ln_final;
  RowMatrix proj;                // C_out x d

  /// Throws ConfigError if any tensor shape disagrees with config.
  void validate() const;
};

/// Weight bundle: directory with manifest.txt plus one FOT1 file per tensor.
ViTWeights load_vit_bundle(const std::filesystem::path& dir);
void save_vit_bundle(const ViTWeights& weights, const std::filesystem::path& dir);

/// Gaussian-initialized weights for tests and synthetic runs.
ViTWeights random_vit_weights(const ViTConfig& config, std::uint64_t seed, float scale = 0.02f);

struct TokenState {
  RowMatrix main;    // (M + 1) x d; row 0 is the global token, rows 1..M the patches
  RowMatrix locals;  // N x d

  Eigen::RowVectorXf global() const { return main.row(0); }
  auto patches() const { return main.bottomRows(main.rows() - 1); }
};

/// Bilinear (half-pixel centers) resize of a crop to image_size^2, scaled to [0, 1] and
/// normalized with the bundle's mean/std. Returns planar CHW floats.
std::vector<float> preprocess_crop(const RgbImage& crop, const ViTConfig& config);

/// Patch embedding plus positional embedding; `n_locals` copies of the initial global token.
/// Throws std::invalid_argument if chw does not hold 3 x image_size^2 values.
TokenState patchify_and_embed(std::span<const float> chw, const ViTWeights& weights, int n_locals);

/// Multi-head attention where query row j attends only to key/value rows key_sets[j].
/// Softmax is normalized over each set separately, per head, with scale sqrt(head_dim).
/// Throws std::invalid_argument on an empty or out-of-range key set. When weights_out
/// is given, entry j receives query j's weights as a heads x |key_sets[j]| row-major list.
RowMatrix restricted_attention(const RowMatrix& queries, const RowMatrix& keys,
                               const RowMatrix& values,
                               const std::vector<std::vector<std::int32_t>>& key_sets, int heads,
                               std::vector<std::vector<float>>* weights_out = nullptr);

/// One transformer block. Global and patch tokens use ordinary self-attention over
/// {global, patches}; local token j attends to the patch tokens in token_sets[j].
/// All tokens share the residual, layer-norm and MLP path.
TokenState attention_block_restricted(const TokenState& state, const PatchAssignment& assignment,
                                      const BlockWeights& block, const ViTConfig& config);

struct LocalFeatures {
  RowMatrix superpixel;         // N x C_out, row j for super-pixel j
  Eigen::RowVectorXf global;    // C_out
};

/// Token states after the embedding (index 0) and after each block (1..L).
using ForwardTrace = std::vector<TokenState>;

/// Runs the embedded tokens through every block, then ln_final + proj on the global
/// and local tokens. Outputs are not normalized.
LocalFeatures encode_tokens(TokenState state, const PatchAssignment& assignment,
                            const ViTWeights& weights, ForwardTrace* trace = nullptr);

/// Full per-crop pass: preprocess, embed, assign patches, encode.
LocalFeatures forward_with_local_tokens(const RgbImage& crop, const SuperpixelMap& spmap,
                                        const ViTWeights& weights, ForwardTrace* trace = nullptr);

/// output(p) = features[labels(p)]; features is N x C.
FeatureMap broadcast_superpixel_features(const RowMatrix& features, const SuperpixelMap& spmap);

}  // namespace fo3d
