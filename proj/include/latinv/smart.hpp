#pragma once

// Softmax-free multi-scale local cross-attention refiner. Queries come from a
// generator feature map; keys and values come from every encoder pyramid
// level, each query reading only the positions its ratio-based index map
// assigns it. The attention and FFN residuals are gated by (beta1, beta2).

#include <cstdint>
#include <vector>

#include <json.hpp>

#include "latinv/autodiff.hpp"
#include "latinv/encoder.hpp"
#include "latinv/generator.hpp"
#include "latinv/nn.hpp"

namespace latinv {

struct BetaWeights {
  double beta1 = 1.0;
  double beta2 = 1.0;
};

struct SmartConfig {
  int layer = 3;  // generator conv layer the block attaches after
  int feature_channels = 32;
  int feature_side = 8;
  std::vector<int> pyramid_channels{16, 32, 64, 128};
  std::vector<int> pyramid_sides{8, 4, 2, 1};
  int attn_width = 32;
  int heads = 1;
  int ffn_hidden = 64;

  void validate() const;
};

/// Derives the feature and pyramid geometry from the two model configs.
SmartConfig smart_config_for(const EncoderConfig& enc, const GeneratorConfig& gen, int layer);

nlohmann::json to_json(const SmartConfig& cfg);
SmartConfig smart_config_from_json(const nlohmann::json& j);

/// Targets for one pyramid level, query-major. Query q reads positions
/// targets[q * per_query .. (q + 1) * per_query).
struct StageIndexMap {
  int feature_side = 0;
  int pyramid_side = 0;
  int per_query = 0;
  std::vector<int> targets;  // flat row-major positions in the pyramid level

  std::span<const int> of(int query) const {
    return {targets.data() + static_cast<std::size_t>(query) * per_query, static_cast<std::size_t>(per_query)};
  }
};

using IndexMap = std::vector<StageIndexMap>;

/// R = H_F / H_P. R >= 1: floor mapping to one target. R < 1: the
/// (1/R) x (1/R) block starting at (i/R, j/R).
StageIndexMap local_index_map(int feature_side, int pyramid_side);

/// Per-position integer offsets at the feature resolution. dx moves along
/// columns, dy along rows.
struct FlowField {
  int height = 0;
  int width = 0;
  std::vector<int> dx;
  std::vector<int> dy;

  static FlowField zeros(int height, int width);
  /// [2, H, W] real tensor (channel 0 = dx, channel 1 = dy), rounded half
  /// away from zero.
  static FlowField from_tensor(const std::vector<double>& values, int height, int width);
};

FlowField flow_from_json(const nlohmann::json& j);

/// Query (i, j) takes the targets of (clamp(i + dy), clamp(j + dx)).
StageIndexMap remap_by_flow(const StageIndexMap& map, const FlowField& flow);

struct SmartParams {
  int heads = 1;
  ad::Var wq, bq;                 // [C_F, a], [a]
  std::vector<ad::Var> wk, bk;    // [C_s, a], [a]
  std::vector<ad::Var> wv, bv;    // [C_s, C_F], [C_F]
  ad::Var w1, b1, w2, b2;         // FFN

  NamedParams named_parameters() const;
};

/// Value and FFN output weights start at zero so the block is the identity.
SmartParams init_smart_params(const SmartConfig& cfg, std::uint64_t seed);

struct QKV {
  ad::Var q;                 // [n_F, a]
  std::vector<ad::Var> k;    // per stage, [n_F * per_query, a], query-major
  std::vector<ad::Var> v;    // per stage, [n_F * per_query, C_F]
  IndexMap maps;
};

/// Builds the ratio maps from the tensor sides.
IndexMap build_index_maps(int feature_side, const PyramidFeatures& pyramid);

/// `feature` is a FeatureMap tensor [C_F, H, W].
QKV project_qkv(const ad::Var& feature, const PyramidFeatures& pyramid, const SmartParams& params);
QKV project_qkv(const ad::Var& feature, const PyramidFeatures& pyramid, const SmartParams& params,
                const IndexMap& maps);

/// out[q] = sum over stages and targets of (q . k) * (beta1 * v), per head.
/// Returns [n_F, C_F].
ad::Var local_cross_attention(const QKV& qkv, double beta1, int heads);

FeatureMap smart_refine(const FeatureMap& feature, const PyramidFeatures& pyramid, const BetaWeights& beta,
                        const SmartParams& params);
FeatureMap smart_refine_with_flow(const FeatureMap& feature, const PyramidFeatures& pyramid, const BetaWeights& beta,
                                  const FlowField& flow, const SmartParams& params);

}  // namespace latinv
