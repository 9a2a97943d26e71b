#include "latinv/smart.hpp"

#include <algorithm>
#include <cmath>

#include "latinv/errors.hpp"

namespace latinv {

void SmartConfig::validate() const {
  if (layer < 1 || feature_channels < 1 || feature_side < 1 || attn_width < 1 || heads < 1 || ffn_hidden < 1)
    throw ConfigError("smart: sizes must be positive");
  if (pyramid_channels.empty() || pyramid_channels.size() != pyramid_sides.size())
    throw ConfigError("smart: pyramid_channels and pyramid_sides must be non-empty and equal length");
  if (attn_width % heads != 0 || feature_channels % heads != 0)
    throw ConfigError("smart: attention and feature widths must divide by the head count");
  for (int side : pyramid_sides) local_index_map(feature_side, side);
}

SmartConfig smart_config_for(const EncoderConfig& enc, const GeneratorConfig& gen, int layer) {
  SmartConfig cfg;
  cfg.layer = layer;
  cfg.feature_channels = gen.layer_channels(layer);
  cfg.feature_side = gen.layer_resolution(layer);
  cfg.pyramid_channels.clear();
  cfg.pyramid_sides.clear();
  for (int s = 1; s <= enc.stages; ++s) {
    cfg.pyramid_channels.push_back(enc.stage_channels(s));
    cfg.pyramid_sides.push_back(enc.grid_side(s));
  }
  cfg.ffn_hidden = 2 * cfg.feature_channels;
  cfg.validate();
  return cfg;
}

nlohmann::json to_json(const SmartConfig& cfg) {
  return {{"layer", cfg.layer},
          {"feature_channels", cfg.feature_channels},
          {"feature_side", cfg.feature_side},
          {"pyramid_channels", cfg.pyramid_channels},
          {"pyramid_sides", cfg.pyramid_sides},
          {"attn_width", cfg.attn_width},
          {"heads", cfg.heads},
          {"ffn_hidden", cfg.ffn_hidden}};
}

SmartConfig smart_config_from_json(const nlohmann::json& j) {
  SmartConfig cfg;
  cfg.layer = j.value("layer", cfg.layer);
  cfg.feature_channels = j.value("feature_channels", cfg.feature_channels);
  cfg.feature_side = j.value("feature_side", cfg.feature_side);
  cfg.pyramid_channels = j.value("pyramid_channels", cfg.pyramid_channels);
  cfg.pyramid_sides = j.value("pyramid_sides", cfg.pyramid_sides);
  cfg.attn_width = j.value("attn_width", cfg.attn_width);
  cfg.heads = j.value("heads", cfg.heads);
  cfg.ffn_hidden = j.value("ffn_hidden", cfg.ffn_hidden);
  cfg.validate();
  return cfg;
}

StageIndexMap local_index_map(int feature_side, int pyramid_side) {
  if (feature_side < 1 || pyramid_side < 1) throw ConfigError("local_index_map: sides must be >= 1");
  StageIndexMap map;
  map.feature_side = feature_side;
  map.pyramid_side = pyramid_side;
  const int hf = feature_side, hp = pyramid_side;
  if (hf % hp == 0) {
    const int r = hf / hp;
    map.per_query = 1;
    map.targets.reserve(static_cast<std::size_t>(hf) * hf);
    for (int i = 0; i < hf; ++i)
      for (int j = 0; j < hf; ++j) map.targets.push_back((i / r) * hp + j / r);
  } else if (hp % hf == 0) {
    const int b = hp / hf;
    map.per_query = b * b;
    map.targets.reserve(static_cast<std::size_t>(hf) * hf * b * b);
    for (int i = 0; i < hf; ++i)
      for (int j = 0; j < hf; ++j)
        for (int a = 0; a < b; ++a)
          for (int c = 0; c < b; ++c) map.targets.push_back((i * b + a) * hp + j * b + c);
  } else {
    throw ConfigError("local_index_map: ratio " + std::to_string(hf) + "/" + std::to_string(hp) +
                      " is neither an integer nor the inverse of one");
  }
  return map;
}

FlowField FlowField::zeros(int height, int width) {
  const auto n = static_cast<std::size_t>(height) * width;
  return {height, width, std::vector<int>(n, 0), std::vector<int>(n, 0)};
}

FlowField FlowField::from_tensor(const std::vector<double>& values, int height, int width) {
  const auto n = static_cast<std::size_t>(height) * width;
  if (height < 1 || width < 1 || values.size() != 2 * n)
    throw ArgumentError("flow field must have shape 2 x " + std::to_string(height) + " x " + std::to_string(width));
  FlowField f = zeros(height, width);
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(values[i]) || !std::isfinite(values[n + i])) throw ArgumentError("flow field is not finite");
    f.dx[i] = static_cast<int>(std::lround(values[i]));
    f.dy[i] = static_cast<int>(std::lround(values[n + i]));
  }
  return f;
}

FlowField flow_from_json(const nlohmann::json& j) {
  // {"dx": [[...]], "dy": [[...]]} or a nested [2][H][W] array.
  nlohmann::json chans;
  if (j.is_object()) {
    if (!j.contains("dx") || !j.contains("dy")) throw ArgumentError("flow JSON needs \"dx\" and \"dy\"");
    chans = nlohmann::json::array({j.at("dx"), j.at("dy")});
  } else {
    chans = j;
  }
  if (!chans.is_array() || chans.size() != 2) throw ArgumentError("flow JSON must hold two channels");
  const auto& c0 = chans[0];
  if (!c0.is_array() || c0.empty() || !c0[0].is_array()) throw ArgumentError("flow channels must be 2-D arrays");
  const int h = static_cast<int>(c0.size());
  const int w = static_cast<int>(c0[0].size());
  std::vector<double> values;
  values.reserve(2 * static_cast<std::size_t>(h) * w);
  for (const auto& ch : chans) {
    if (!ch.is_array() || static_cast<int>(ch.size()) != h) throw ArgumentError("flow channels differ in shape");
    for (const auto& row : ch) {
      if (!row.is_array() || static_cast<int>(row.size()) != w) throw ArgumentError("flow rows are ragged");
      for (const auto& v : row) values.push_back(v.get<double>());
    }
  }
  return FlowField::from_tensor(values, h, w);
}

StageIndexMap remap_by_flow(const StageIndexMap& map, const FlowField& flow) {
  const int s = map.feature_side;
  if (flow.height != s || flow.width != s)
    throw ArgumentError("flow field must be " + std::to_string(s) + "x" + std::to_string(s) + " at the feature resolution");
  StageIndexMap out = map;
  for (int i = 0; i < s; ++i)
    for (int j = 0; j < s; ++j) {
      const int q = i * s + j;
      const int si = std::clamp(i + flow.dy[q], 0, s - 1);
      const int sj = std::clamp(j + flow.dx[q], 0, s - 1);
      auto src = map.of(si * s + sj);
      std::copy(src.begin(), src.end(), out.targets.begin() + static_cast<std::ptrdiff_t>(q) * map.per_query);
    }
  return out;
}

NamedParams SmartParams::named_parameters() const {
  NamedParams out{{"smart.q.weight", wq}, {"smart.q.bias", bq}};
  for (std::size_t s = 0; s < wk.size(); ++s) {
    const std::string p = "smart.stage" + std::to_string(s + 1) + ".";
    out.emplace_back(p + "k.weight", wk[s]);
    out.emplace_back(p + "k.bias", bk[s]);
    out.emplace_back(p + "v.weight", wv[s]);
    out.emplace_back(p + "v.bias", bv[s]);
  }
  out.emplace_back("smart.ffn.w1", w1);
  out.emplace_back("smart.ffn.b1", b1);
  out.emplace_back("smart.ffn.w2", w2);
  out.emplace_back("smart.ffn.b2", b2);
  return out;
}

SmartParams init_smart_params(const SmartConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  SmartParams p;
  p.heads = cfg.heads;
  const int cf = cfg.feature_channels, a = cfg.attn_width;
  p.wq = normal_param({cf, a}, 1.0 / std::sqrt(cf), rng);
  p.bq = constant_param({a}, 0.0);
  for (int c : cfg.pyramid_channels) {
    p.wk.push_back(normal_param({c, a}, 1.0 / std::sqrt(c), rng));
    p.bk.push_back(constant_param({a}, 0.0));
    p.wv.push_back(constant_param({c, cf}, 0.0));
    p.bv.push_back(constant_param({cf}, 0.0));
  }
  p.w1 = normal_param({cf, cfg.ffn_hidden}, 1.0 / std::sqrt(cf), rng);
  p.b1 = constant_param({cfg.ffn_hidden}, 0.0);
  p.w2 = constant_param({cfg.ffn_hidden, cf}, 0.0);
  p.b2 = constant_param({cf}, 0.0);
  return p;
}

IndexMap build_index_maps(int feature_side, const PyramidFeatures& pyramid) {
  IndexMap maps;
  for (const auto& level : pyramid.maps) maps.push_back(local_index_map(feature_side, level.side));
  return maps;
}

namespace {

ad::Var feature_tokens(const ad::Var& feature) {
  if (feature.rank() != 3 || feature.dim(1) != feature.dim(2))
    throw DimensionError("smart: feature map must be [C, H, H]");
  return ad::chw_to_tokens(feature);
}

}  // namespace

QKV project_qkv(const ad::Var& feature, const PyramidFeatures& pyramid, const SmartParams& params,
                const IndexMap& maps) {
  const ad::Var tokens = feature_tokens(feature);
  const int side = feature.dim(1);
  if (tokens.dim(1) != params.wq.dim(0))
    throw DimensionError("project_qkv: feature width " + std::to_string(tokens.dim(1)) + " vs query input " +
                         std::to_string(params.wq.dim(0)));
  if (pyramid.maps.size() != params.wk.size() || maps.size() != pyramid.maps.size())
    throw DimensionError("project_qkv: pyramid has " + std::to_string(pyramid.maps.size()) + " levels, params " +
                         std::to_string(params.wk.size()));
  QKV out;
  out.q = ad::linear(tokens, params.wq, params.bq);
  out.maps = maps;
  for (std::size_t s = 0; s < pyramid.maps.size(); ++s) {
    const auto& level = pyramid.maps[s];
    const auto& map = maps[s];
    if (level.tokens.dim(1) != params.wk[s].dim(0))
      throw DimensionError("project_qkv: stage " + std::to_string(s + 1) + " width mismatch");
    if (map.feature_side != side || map.pyramid_side != level.side ||
        level.tokens.dim(0) != level.side * level.side)
      throw DimensionError("project_qkv: index map inconsistent with stage " + std::to_string(s + 1));
    ad::Var k = ad::linear(level.tokens, params.wk[s], params.bk[s]);
    ad::Var v = ad::linear(level.tokens, params.wv[s], params.bv[s]);
    out.k.push_back(ad::gather_rows(k, map.targets));
    out.v.push_back(ad::gather_rows(v, map.targets));
  }
  return out;
}

QKV project_qkv(const ad::Var& feature, const PyramidFeatures& pyramid, const SmartParams& params) {
  if (feature.rank() != 3) throw DimensionError("project_qkv: feature map must be [C, H, W]");
  return project_qkv(feature, pyramid, params, build_index_maps(feature.dim(1), pyramid));
}

ad::Var local_cross_attention(const QKV& qkv, double beta1, int heads) {
  const int n = qkv.q.dim(0);
  const int a = qkv.q.dim(1);
  if (qkv.k.empty() || qkv.k.size() != qkv.v.size() || qkv.k.size() != qkv.maps.size())
    throw DimensionError("local_cross_attention: stage lists differ in length");
  const int cv = qkv.v[0].dim(1);
  if (heads < 1 || a % heads != 0 || cv % heads != 0)
    throw DimensionError("local_cross_attention: widths must divide by the head count");
  std::vector<int> query_of;
  for (std::size_t s = 0; s < qkv.k.size(); ++s) {
    const auto& map = qkv.maps[s];
    const auto pairs = static_cast<std::size_t>(n) * map.per_query;
    if (map.targets.size() != pairs || static_cast<std::size_t>(qkv.k[s].dim(0)) != pairs ||
        static_cast<std::size_t>(qkv.v[s].dim(0)) != pairs || qkv.k[s].dim(1) != a || qkv.v[s].dim(1) != cv)
      throw DimensionError("local_cross_attention: stage " + std::to_string(s + 1) + " shapes do not match its map");
    for (int q = 0; q < n; ++q)
      for (int t = 0; t < map.per_query; ++t) query_of.push_back(q);
  }
  ad::Var k = qkv.k.size() == 1 ? qkv.k[0] : ad::concat_rows(qkv.k);
  ad::Var v = qkv.v.size() == 1 ? qkv.v[0] : ad::concat_rows(qkv.v);
  ad::Var q = ad::gather_rows(qkv.q, query_of);
  v = ad::scale(v, beta1);
  const int dq = a / heads, dv = cv / heads;
  std::vector<ad::Var> outs;
  for (int h = 0; h < heads; ++h) {
    ad::Var qh = heads == 1 ? q : ad::slice_cols(q, h * dq, (h + 1) * dq);
    ad::Var kh = heads == 1 ? k : ad::slice_cols(k, h * dq, (h + 1) * dq);
    ad::Var vh = heads == 1 ? v : ad::slice_cols(v, h * dv, (h + 1) * dv);
    ad::Var scores = ad::row_sum(ad::mul(qh, kh));
    outs.push_back(ad::segment_sum(ad::scale_rows(vh, scores), query_of, n));
  }
  return heads == 1 ? outs[0] : ad::concat_cols(outs);
}

namespace {

FeatureMap refine(const FeatureMap& feature, const PyramidFeatures& pyramid, const BetaWeights& beta,
                  const SmartParams& params, const IndexMap& maps) {
  const ad::Var& f = feature.tensor;
  QKV qkv = project_qkv(f, pyramid, params, maps);
  ad::Var tokens = ad::chw_to_tokens(f);
  ad::Var fhat = ad::add(local_cross_attention(qkv, beta.beta1, params.heads), tokens);
  ad::Var ffn = ad::linear(ad::relu(ad::linear(fhat, params.w1, params.b1)), params.w2, params.b2);
  ad::Var out = ad::add(ad::scale(ffn, beta.beta2), fhat);
  return {ad::tokens_to_chw(out, f.dim(1), f.dim(2)), feature.layer};
}

}  // namespace

FeatureMap smart_refine(const FeatureMap& feature, const PyramidFeatures& pyramid, const BetaWeights& beta,
                        const SmartParams& params) {
  if (feature.tensor.rank() != 3) throw DimensionError("smart_refine: feature map must be [C, H, W]");
  return refine(feature, pyramid, beta, params, build_index_maps(feature.tensor.dim(1), pyramid));
}

FeatureMap smart_refine_with_flow(const FeatureMap& feature, const PyramidFeatures& pyramid, const BetaWeights& beta,
                                  const FlowField& flow, const SmartParams& params) {
  if (feature.tensor.rank() != 3) throw DimensionError("smart_refine_with_flow: feature map must be [C, H, W]");
  IndexMap maps = build_index_maps(feature.tensor.dim(1), pyramid);
  for (auto& m : maps) m = remap_by_flow(m, flow);
  return refine(feature, pyramid, beta, params, maps);
}

}  // namespace latinv
