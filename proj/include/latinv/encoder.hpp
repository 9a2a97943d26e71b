#pragma once

// Hierarchical windowed-attention encoder with appended latent tokens.
//
// Patch tokens are attended within M x M windows (alternating plain and
// cyclically shifted partitions). The T latent tokens are replicated into
// every window, attend jointly with the patches, and are merged back by a
// sum over windows followed by LayerNorm. Each stage output becomes one
// pyramid level; the final latent tokens feed a per-token MLP head that
// predicts one latent row per generator style input.

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "latinv/autodiff.hpp"
#include "latinv/latent_spaces.hpp"
#include "latinv/nn.hpp"

namespace latinv {

struct EncoderConfig {
  int image_size = 32;
  int patch_size = 4;
  int window_size = 4;
  int stages = 4;
  std::vector<int> stage_depths{2, 2, 2, 2};
  int base_channels = 16;
  int latent_token_count = 8;
  std::vector<int> heads_per_stage{1, 2, 4, 8};
  int mlp_ratio = 2;
  int w_dim = 32;
  int head_hidden = 64;

  int grid_side(int stage) const;  // stage is 1-based
  int stage_channels(int stage) const { return base_channels << (stage - 1); }
  /// Window side used at a stage: min(M, grid side).
  int effective_window(int stage) const;
  void validate() const;
};

nlohmann::json to_json(const EncoderConfig& cfg);
EncoderConfig encoder_config_from_json(const nlohmann::json& j);

/// Row-major grid of tokens, [grid_h * grid_w, channels].
struct PatchTokens {
  ad::Var tensor;
  int grid_h = 0;
  int grid_w = 0;
};

/// [T, channels]
struct LatentTokens {
  ad::Var tensor;
};

struct PyramidLevel {
  ad::Var tokens;  // [side * side, channels]
  int side = 0;
  int channels() const { return tokens.dim(1); }
};

struct PyramidFeatures {
  std::vector<PyramidLevel> maps;
};

struct EncodeOutput {
  PyramidFeatures pyramid;
  LatentTokens latents;
};

struct AttentionParams {
  int heads = 1;
  int window = 1;
  ad::Var qkv_weight;  // [c, 3c]
  ad::Var qkv_bias;    // [3c]
  ad::Var proj_weight;
  ad::Var proj_bias;
  ad::Var rel_bias;    // [(2M - 1)^2, heads]
};

struct EncoderBlock {
  AttentionParams attn;
  bool shifted = false;
  ad::Var norm1_gamma, norm1_beta;  // after attention, patch path
  ad::Var norm2_gamma, norm2_beta;  // after MLP, patch path
  ad::Var lat_gamma, lat_beta;      // latent merge
  ad::Var mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

struct StageTransition {
  ad::Var merge_weight;  // [4c, 2c]
  ad::Var merge_gamma, merge_beta;
  ad::Var lat_weight;    // [c, 2c]
  ad::Var lat_bias;
  ad::Var lat_gamma, lat_beta;
};

struct PredictionHead {
  ad::Var w1, b1, w2, b2, w3, b3;
};

/// Per-window attention outputs before residuals.
struct WindowAttentionOutput {
  std::vector<ad::Var> patches;  // [M^2, c] each
  std::vector<ad::Var> latents;  // [T, c] each; empty when no latents
  /// Softmax weights per window and head, filled only when requested.
  std::vector<std::vector<ad::Var>> weights;
};

/// Splits the grid into (grid_h / M) * (grid_w / M) windows of M^2 rows each,
/// windows and slots both row-major.
std::vector<ad::Var> window_partition(const PatchTokens& patches, int window);
PatchTokens window_reverse(const std::vector<ad::Var>& windows, int window, int grid_h, int grid_w);

/// Appends the same latent rows after the patch rows of every window.
std::vector<ad::Var> attach_latent_tokens(const std::vector<ad::Var>& windows, const LatentTokens& lat);

/// Multi-head scaled softmax attention inside each augmented window. The
/// first M^2 rows of each window are patches. Relative position bias and the
/// shift mask (when `shift` > 0, with `grid` the full grid side) apply only
/// among patch pairs.
WindowAttentionOutput windowed_self_attention(const std::vector<ad::Var>& aug_windows, const AttentionParams& params,
                                              int shift = 0, int grid_h = 0, int grid_w = 0,
                                              bool keep_weights = false);

/// Sum over replicas, then LayerNorm over channels.
LatentTokens merge_latent_replicas(const std::vector<ad::Var>& replicas, const ad::Var& gamma, const ad::Var& beta);
/// Unit-scale, zero-shift LayerNorm.
LatentTokens merge_latent_replicas(const std::vector<ad::Var>& replicas);

/// Patch merging on the grid plus Linear + LayerNorm on the latent tokens.
std::pair<PatchTokens, LatentTokens> stage_transition(const PatchTokens& patches, const LatentTokens& lat,
                                                      const StageTransition& params);

/// Per-token 3-layer tanh MLP plus the average latent. lat [T, c] -> [T, d].
ad::Var predict_latents(const LatentTokens& lat, const PredictionHead& head, const AverageLatent& w_bar);

class Encoder {
 public:
  Encoder() = default;
  Encoder(const EncoderConfig& cfg, std::uint64_t seed);

  const EncoderConfig& config() const { return cfg_; }

  /// image [3, H, W] -> pyramid + final latent tokens at width 8C.
  EncodeOutput encode(const ad::Var& image) const;
  /// The same backbone with no latent-token code path at all.
  PyramidFeatures encode_backbone(const ad::Var& image) const;
  ad::Var predict(const LatentTokens& lat, const AverageLatent& w_bar) const {
    return predict_latents(lat, head, w_bar);
  }

  /// Backbone parameters (patch embedding, latent tokens, blocks, transitions).
  NamedParams backbone_parameters() const;
  NamedParams head_parameters() const;
  NamedParams named_parameters() const;

  ad::Var embed_weight, embed_bias, embed_gamma, embed_beta;
  ad::Var latent_init;  // [T, C]
  std::vector<std::vector<EncoderBlock>> blocks;
  std::vector<StageTransition> transitions;
  PredictionHead head;

 private:
  PatchTokens embed(const ad::Var& image) const;
  void run_block(const EncoderBlock& block, int stage, PatchTokens& x, LatentTokens* lat) const;
  PyramidFeatures run(const ad::Var& image, LatentTokens* lat) const;

  EncoderConfig cfg_;
};

enum class AttentionKind { MSA, WMSA, WMSA_LATENT };

AttentionKind attention_kind_from_string(const std::string& name);

/// Multiply-accumulate count of one attention layer on an h x w patch grid.
std::uint64_t complexity(AttentionKind kind, std::uint64_t h, std::uint64_t w, std::uint64_t C, std::uint64_t M,
                         std::uint64_t T);

}  // namespace latinv
