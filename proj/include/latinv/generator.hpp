#pragma once

// Scaled-down style-based synthesis network. A mapping MLP turns z into w;
// per-layer affine transforms turn latent rows into channel-wise styles that
// modulate 3x3 convolutions. Each resolution group is conv_up, conv, ToRGB,
// and ToRGB outputs are upsampled and summed into an RGB canvas.
//
// Layer numbering: non-ToRGB conv layers are 1..L-1 in network order. Layer
// l consumes latent row l; the ToRGB that closes a group ending at layer l
// consumes row l + 1 (so the last ToRGB uses row L).

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include <json.hpp>

#include "latinv/autodiff.hpp"
#include "latinv/image.hpp"
#include "latinv/latent_spaces.hpp"
#include "latinv/nn.hpp"

namespace latinv {

struct GeneratorConfig {
  int output_size = 32;
  int z_dim = 32;
  int w_dim = 32;
  int base_feature_channels = 32;
  int mapping_depth = 8;

  /// L = 2 log2(output_size) - 2.
  int style_count() const;
  int conv_layer_count() const { return style_count() - 1; }
  int layer_resolution(int layer) const;
  int layer_channels(int layer) const;
  bool is_upsampling_layer(int layer) const { return layer >= 2 && layer % 2 == 0; }
  /// True when a ToRGB consumes this layer's output.
  bool closes_group(int layer) const { return layer == 1 || layer % 2 == 1; }
  void validate() const;
};

nlohmann::json to_json(const GeneratorConfig& cfg);
GeneratorConfig generator_config_from_json(const nlohmann::json& j);

/// Channel-wise style for one layer.
struct StyleCode {
  std::vector<double> values;
};

/// Generator activation after conv layer `layer`, [C, H, W].
struct FeatureMap {
  ad::Var tensor;
  int layer = 0;
};

struct DenseLayer {
  ad::Var weight;  // [in, out]
  ad::Var bias;    // [out]
};

struct StyledConv {
  DenseLayer affine;  // w row -> input-channel style
  ad::Var weight;     // [out, in, k, k]
  ad::Var bias;       // [out]
};

class Generator {
 public:
  Generator() = default;
  Generator(const GeneratorConfig& cfg, std::uint64_t seed);

  const GeneratorConfig& config() const { return cfg_; }

  /// z [z_dim] -> w [w_dim]. Hidden layers use leaky ReLU, the last is linear.
  ad::Var map_z_to_w(const ad::Var& z) const;
  std::vector<double> map_z_to_w(std::span<const double> z) const;

  /// Style for conv layer `layer` (1..L-1).
  StyleCode affine_style(std::span<const double> w_row, int layer) const;
  /// Style for the ToRGB closing the group that ends at conv layer `layer`.
  StyleCode torgb_style(std::span<const double> w_row, int layer) const;

  /// wplus [L, d] -> image [3, S, S]
  ad::Var synthesize(const ad::Var& wplus) const;
  /// Runs conv layers 1..l. The canvas holds every ToRGB applied to layers
  /// before l; it is empty (default Var) when none has run.
  std::pair<FeatureMap, ad::Var> synthesize_to_layer(const ad::Var& wplus, int layer) const;
  /// Continues from a (possibly replaced) layer-l activation.
  ad::Var synthesize_from_layer(const FeatureMap& feature, const ad::Var& partial, const ad::Var& wplus,
                                int layer) const;

  Image synthesize(const LatentCode& wplus) const;
  LatentCode broadcast_w(std::span<const double> w) const;

  /// Mean of map_z_to_w over n standard-normal draws.
  AverageLatent average_latent(int n, std::uint64_t seed) const;

  NamedParams named_parameters() const;

  // Exposed so tests can install hand-built weights.
  std::vector<DenseLayer> mapping;
  ad::Var const_input;              // [C, 4, 4]
  std::vector<StyledConv> convs;    // index l - 1
  std::vector<StyledConv> torgbs;   // one per group

 private:
  ad::Var style_row(const ad::Var& wplus, int row) const;
  ad::Var run_conv(const ad::Var& x, const ad::Var& wplus, int layer) const;
  ad::Var run_torgb(const ad::Var& x, const ad::Var& canvas, const ad::Var& wplus, int layer) const;
  int group_of(int layer) const { return layer == 1 ? 0 : layer / 2; }
  void check_wplus(const ad::Var& wplus) const;

  GeneratorConfig cfg_;
};

}  // namespace latinv
