#include "latinv/generator.hpp"

#include <cmath>

#include "latinv/errors.hpp"

namespace latinv {

namespace {

constexpr double kLeak = 0.2;
const double kActGain = std::sqrt(2.0);
// Keeps the summed canvas of a random generator near [-1, 1].
constexpr double kRgbInitStd = 0.5;

int log2_exact(int v) {
  int k = 0;
  while ((1 << k) < v) ++k;
  return (1 << k) == v ? k : -1;
}

ad::Var dense(const ad::Var& x_row, const DenseLayer& layer) {
  return ad::linear(x_row, layer.weight, layer.bias);
}

}  // namespace

int GeneratorConfig::style_count() const { return 2 * log2_exact(output_size) - 2; }

int GeneratorConfig::layer_resolution(int layer) const {
  if (layer < 1 || layer > conv_layer_count()) throw ArgumentError("generator layer out of range");
  return 4 << (layer / 2);
}

int GeneratorConfig::layer_channels(int layer) const {
  const int res = layer_resolution(layer);
  return std::max(4, base_feature_channels * 8 / std::max(res, 8));
}

void GeneratorConfig::validate() const {
  if (output_size < 8 || log2_exact(output_size) < 0)
    throw ConfigError("generator output_size must be a power of two >= 8");
  if (z_dim < 1 || w_dim < 1 || base_feature_channels < 4 || mapping_depth < 1)
    throw ConfigError("generator widths and mapping depth must be positive");
}

nlohmann::json to_json(const GeneratorConfig& cfg) {
  return {{"output_size", cfg.output_size},
          {"z_dim", cfg.z_dim},
          {"w_dim", cfg.w_dim},
          {"base_feature_channels", cfg.base_feature_channels},
          {"mapping_depth", cfg.mapping_depth}};
}

GeneratorConfig generator_config_from_json(const nlohmann::json& j) {
  GeneratorConfig cfg;
  cfg.output_size = j.value("output_size", cfg.output_size);
  cfg.z_dim = j.value("z_dim", cfg.z_dim);
  cfg.w_dim = j.value("w_dim", cfg.w_dim);
  cfg.base_feature_channels = j.value("base_feature_channels", cfg.base_feature_channels);
  cfg.mapping_depth = j.value("mapping_depth", cfg.mapping_depth);
  cfg.validate();
  return cfg;
}

Generator::Generator(const GeneratorConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  const int d = cfg_.w_dim;

  for (int i = 0; i < cfg_.mapping_depth; ++i) {
    const int in = i == 0 ? cfg_.z_dim : d;
    mapping.push_back({normal_param({in, d}, 1.0 / std::sqrt(in), rng), constant_param({d}, 0.0)});
  }

  const int c4 = cfg_.layer_channels(1);
  const_input = normal_param({c4, 4, 4}, 1.0, rng);
  int in_ch = c4;
  for (int l = 1; l <= cfg_.conv_layer_count(); ++l) {
    const int out_ch = cfg_.layer_channels(l);
    StyledConv conv;
    conv.affine = {normal_param({d, in_ch}, 1.0 / std::sqrt(d), rng), constant_param({in_ch}, 1.0)};
    conv.weight = normal_param({out_ch, in_ch, 3, 3}, 1.0, rng);
    conv.bias = constant_param({out_ch}, 0.0);
    convs.push_back(std::move(conv));
    if (cfg_.closes_group(l)) {
      StyledConv rgb;
      rgb.affine = {normal_param({d, out_ch}, 1.0 / std::sqrt(d), rng), constant_param({out_ch}, 1.0)};
      rgb.weight = normal_param({3, out_ch, 1, 1}, kRgbInitStd, rng);
      rgb.bias = constant_param({3}, 0.0);
      torgbs.push_back(std::move(rgb));
    }
    in_ch = out_ch;
  }
}

ad::Var Generator::map_z_to_w(const ad::Var& z) const {
  if (z.size() != static_cast<std::size_t>(cfg_.z_dim))
    throw DimensionError("map_z_to_w: z has length " + std::to_string(z.size()) + ", expected " +
                         std::to_string(cfg_.z_dim));
  ad::Var x = ad::reshape(z, {1, cfg_.z_dim});
  for (std::size_t i = 0; i < mapping.size(); ++i) {
    x = dense(x, mapping[i]);
    if (i + 1 < mapping.size()) x = ad::scale(ad::leaky_relu(x, kLeak), kActGain);
  }
  return ad::reshape(x, {x.dim(1)});
}

std::vector<double> Generator::map_z_to_w(std::span<const double> z) const {
  ad::NoGradGuard guard;
  return map_z_to_w(ad::constant({static_cast<int>(z.size())}, {z.begin(), z.end()})).value();
}

StyleCode Generator::affine_style(std::span<const double> w_row, int layer) const {
  if (layer < 1 || layer > cfg_.conv_layer_count()) throw ArgumentError("affine_style: invalid layer");
  if (w_row.size() != static_cast<std::size_t>(cfg_.w_dim)) throw DimensionError("affine_style: w width");
  ad::NoGradGuard guard;
  auto x = ad::constant({1, cfg_.w_dim}, {w_row.begin(), w_row.end()});
  return {dense(x, convs[layer - 1].affine).value()};
}

StyleCode Generator::torgb_style(std::span<const double> w_row, int layer) const {
  if (layer < 1 || layer > cfg_.conv_layer_count() || !cfg_.closes_group(layer))
    throw ArgumentError("torgb_style: layer does not close a group");
  if (w_row.size() != static_cast<std::size_t>(cfg_.w_dim)) throw DimensionError("torgb_style: w width");
  ad::NoGradGuard guard;
  auto x = ad::constant({1, cfg_.w_dim}, {w_row.begin(), w_row.end()});
  return {dense(x, torgbs[group_of(layer)].affine).value()};
}

void Generator::check_wplus(const ad::Var& wplus) const {
  if (wplus.rank() != 2 || wplus.dim(0) != cfg_.style_count() || wplus.dim(1) != cfg_.w_dim)
    throw DimensionError("generator expects wplus of shape [" + std::to_string(cfg_.style_count()) + ", " +
                         std::to_string(cfg_.w_dim) + "]");
}

ad::Var Generator::style_row(const ad::Var& wplus, int row) const {
  return ad::gather_rows(wplus, {row - 1});
}

ad::Var Generator::run_conv(const ad::Var& x, const ad::Var& wplus, int layer) const {
  const auto& conv = convs[layer - 1];
  ad::Var style = ad::reshape(dense(style_row(wplus, layer), conv.affine), {conv.weight.dim(1)});
  ad::Var w = ad::modulate_weight(conv.weight, style, true, 1.0);
  ad::Var in = cfg_.is_upsampling_layer(layer) ? ad::upsample_bilinear2x(x) : x;
  ad::Var y = ad::add_channel_bias(ad::conv2d(in, w), conv.bias);
  return ad::scale(ad::leaky_relu(y, kLeak), kActGain);
}

ad::Var Generator::run_torgb(const ad::Var& x, const ad::Var& canvas, const ad::Var& wplus, int layer) const {
  const auto& rgb = torgbs[group_of(layer)];
  const int in_ch = rgb.weight.dim(1);
  ad::Var style = ad::reshape(dense(style_row(wplus, layer + 1), rgb.affine), {in_ch});
  ad::Var w = ad::modulate_weight(rgb.weight, style, false, 1.0 / std::sqrt(in_ch));
  ad::Var y = ad::add_channel_bias(ad::conv2d(x, w), rgb.bias);
  if (!canvas) return y;
  ad::Var base = canvas;
  while (base.dim(1) < y.dim(1)) base = ad::upsample_bilinear2x(base);
  return ad::add(base, y);
}

std::pair<FeatureMap, ad::Var> Generator::synthesize_to_layer(const ad::Var& wplus, int layer) const {
  check_wplus(wplus);
  if (layer < 1 || layer > cfg_.conv_layer_count())
    throw ArgumentError("synthesize_to_layer: layer must lie in [1, " + std::to_string(cfg_.conv_layer_count()) +
                        "]");
  ad::Var x = const_input;
  ad::Var canvas;
  for (int l = 1; l <= layer; ++l) {
    x = run_conv(x, wplus, l);
    if (l < layer && cfg_.closes_group(l)) canvas = run_torgb(x, canvas, wplus, l);
  }
  return {FeatureMap{x, layer}, canvas};
}

ad::Var Generator::synthesize_from_layer(const FeatureMap& feature, const ad::Var& partial, const ad::Var& wplus,
                                         int layer) const {
  check_wplus(wplus);
  if (layer < 1 || layer > cfg_.conv_layer_count()) throw ArgumentError("synthesize_from_layer: invalid layer");
  const auto& t = feature.tensor;
  const int res = cfg_.layer_resolution(layer);
  if (t.rank() != 3 || t.dim(0) != cfg_.layer_channels(layer) || t.dim(1) != res || t.dim(2) != res)
    throw DimensionError("synthesize_from_layer: feature does not match layer " + std::to_string(layer) + " output");
  ad::Var x = t;
  ad::Var canvas = partial;
  if (cfg_.closes_group(layer)) canvas = run_torgb(x, canvas, wplus, layer);
  for (int l = layer + 1; l <= cfg_.conv_layer_count(); ++l) {
    x = run_conv(x, wplus, l);
    if (cfg_.closes_group(l)) canvas = run_torgb(x, canvas, wplus, l);
  }
  return canvas;
}

ad::Var Generator::synthesize(const ad::Var& wplus) const {
  const int last = cfg_.conv_layer_count();
  auto [feature, partial] = synthesize_to_layer(wplus, last);
  return synthesize_from_layer(feature, partial, wplus, last);
}

Image Generator::synthesize(const LatentCode& wplus) const {
  ad::NoGradGuard guard;
  return image_from_var(synthesize(ad::constant({wplus.layers(), wplus.channels()}, wplus.values())));
}

LatentCode Generator::broadcast_w(std::span<const double> w) const {
  if (w.size() != static_cast<std::size_t>(cfg_.w_dim)) throw DimensionError("broadcast_w: w has wrong length");
  return LatentCode::broadcast(w, cfg_.style_count());
}

AverageLatent Generator::average_latent(int n, std::uint64_t seed) const {
  if (n < 1) throw ArgumentError("average_latent: n must be >= 1");
  Rng rng(seed);
  std::vector<double> acc(cfg_.w_dim, 0.0);
  for (int i = 0; i < n; ++i) {
    auto z = standard_normal(cfg_.z_dim, rng);
    auto w = map_z_to_w(z);
    for (int c = 0; c < cfg_.w_dim; ++c) acc[c] += w[c];
  }
  for (auto& v : acc) v /= n;
  return {acc};
}

NamedParams Generator::named_parameters() const {
  NamedParams out;
  for (std::size_t i = 0; i < mapping.size(); ++i) {
    out.emplace_back("generator.mapping." + std::to_string(i) + ".weight", mapping[i].weight);
    out.emplace_back("generator.mapping." + std::to_string(i) + ".bias", mapping[i].bias);
  }
  out.emplace_back("generator.const_input", const_input);
  auto add_conv = [&out](const std::string& prefix, const StyledConv& c) {
    out.emplace_back(prefix + ".affine.weight", c.affine.weight);
    out.emplace_back(prefix + ".affine.bias", c.affine.bias);
    out.emplace_back(prefix + ".weight", c.weight);
    out.emplace_back(prefix + ".bias", c.bias);
  };
  for (std::size_t i = 0; i < convs.size(); ++i) add_conv("generator.conv." + std::to_string(i + 1), convs[i]);
  for (std::size_t i = 0; i < torgbs.size(); ++i) add_conv("generator.torgb." + std::to_string(i), torgbs[i]);
  return out;
}

}  // namespace latinv
