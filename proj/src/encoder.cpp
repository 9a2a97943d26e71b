#include "latinv/encoder.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "latinv/errors.hpp"

namespace latinv {

namespace {

constexpr double kMaskValue = -1e4;

ad::Var linear_no_bias(const ad::Var& x, const ad::Var& w) { return ad::matmul(x, w); }

int region_label(int pos, int grid, int window, int shift) {
  if (pos < grid - window) return 0;
  if (pos < grid - shift) return 1;
  return 2;
}

std::vector<int> roll_index(int grid_h, int grid_w, int shift) {
  // rolled[i, j] = x[(i + shift) % gh, (j + shift) % gw]
  std::vector<int> idx(static_cast<std::size_t>(grid_h) * grid_w);
  for (int i = 0; i < grid_h; ++i)
    for (int j = 0; j < grid_w; ++j) idx[i * grid_w + j] = ((i + shift) % grid_h) * grid_w + (j + shift) % grid_w;
  return idx;
}

std::vector<int> unroll_index(int grid_h, int grid_w, int shift) {
  std::vector<int> idx(static_cast<std::size_t>(grid_h) * grid_w);
  for (int i = 0; i < grid_h; ++i)
    for (int j = 0; j < grid_w; ++j)
      idx[i * grid_w + j] = ((i - shift + grid_h) % grid_h) * grid_w + (j - shift + grid_w) % grid_w;
  return idx;
}

void check_finite(const ad::Var& v, const char* where) {
  for (double x : v.value())
    if (!std::isfinite(x)) throw NumericError(std::string(where) + ": non-finite activation");
}

}  // namespace

int EncoderConfig::grid_side(int stage) const { return (image_size / patch_size) >> (stage - 1); }

int EncoderConfig::effective_window(int stage) const { return std::min(window_size, grid_side(stage)); }

void EncoderConfig::validate() const {
  if (image_size < 1 || patch_size < 1 || image_size % patch_size != 0)
    throw ConfigError("encoder: image_size must be a positive multiple of patch_size");
  if (window_size < 1 || stages < 1 || base_channels < 1 || latent_token_count < 0 || w_dim < 1 ||
      head_hidden < 1 || mlp_ratio < 1)
    throw ConfigError("encoder: sizes must be positive");
  if (static_cast<int>(stage_depths.size()) != stages || static_cast<int>(heads_per_stage.size()) != stages)
    throw ConfigError("encoder: stage_depths and heads_per_stage need one entry per stage");
  int grid = image_size / patch_size;
  for (int s = 1; s <= stages; ++s) {
    if (grid < 1) throw ConfigError("encoder: grid vanishes before stage " + std::to_string(s));
    if (s < stages && grid % 2 != 0) throw ConfigError("encoder: odd grid side before stage transition");
    const int m = std::min(window_size, grid);
    if (grid % m != 0)
      throw ConfigError("encoder: stage " + std::to_string(s) + " grid " + std::to_string(grid) +
                        " not divisible by window " + std::to_string(m));
    if (stage_depths[s - 1] < 1 || heads_per_stage[s - 1] < 1 || stage_channels(s) % heads_per_stage[s - 1] != 0)
      throw ConfigError("encoder: stage " + std::to_string(s) + " depth/heads invalid");
    grid /= 2;
  }
}

nlohmann::json to_json(const EncoderConfig& cfg) {
  return {{"image_size", cfg.image_size},       {"patch_size", cfg.patch_size},
          {"window_size", cfg.window_size},     {"stages", cfg.stages},
          {"stage_depths", cfg.stage_depths},   {"base_channels", cfg.base_channels},
          {"latent_token_count", cfg.latent_token_count},
          {"heads_per_stage", cfg.heads_per_stage},
          {"mlp_ratio", cfg.mlp_ratio},         {"w_dim", cfg.w_dim},
          {"head_hidden", cfg.head_hidden}};
}

EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
  EncoderConfig cfg;
  cfg.image_size = j.value("image_size", cfg.image_size);
  cfg.patch_size = j.value("patch_size", cfg.patch_size);
  cfg.window_size = j.value("window_size", cfg.window_size);
  cfg.stages = j.value("stages", cfg.stages);
  cfg.stage_depths = j.value("stage_depths", cfg.stage_depths);
  cfg.base_channels = j.value("base_channels", cfg.base_channels);
  cfg.latent_token_count = j.value("latent_token_count", cfg.latent_token_count);
  cfg.heads_per_stage = j.value("heads_per_stage", cfg.heads_per_stage);
  cfg.mlp_ratio = j.value("mlp_ratio", cfg.mlp_ratio);
  cfg.w_dim = j.value("w_dim", cfg.w_dim);
  cfg.head_hidden = j.value("head_hidden", cfg.head_hidden);
  cfg.validate();
  return cfg;
}

std::vector<ad::Var> window_partition(const PatchTokens& patches, int window) {
  const int gh = patches.grid_h, gw = patches.grid_w;
  if (window < 1 || gh % window != 0 || gw % window != 0)
    throw ConfigError("window_partition: grid " + std::to_string(gh) + "x" + std::to_string(gw) +
                      " not divisible by window " + std::to_string(window));
  if (patches.tensor.rank() != 2 || patches.tensor.dim(0) != gh * gw)
    throw DimensionError("window_partition: token count does not match grid");
  std::vector<ad::Var> out;
  for (int wy = 0; wy < gh / window; ++wy)
    for (int wx = 0; wx < gw / window; ++wx) {
      std::vector<int> rows;
      rows.reserve(static_cast<std::size_t>(window) * window);
      for (int a = 0; a < window; ++a)
        for (int b = 0; b < window; ++b) rows.push_back((wy * window + a) * gw + wx * window + b);
      out.push_back(ad::gather_rows(patches.tensor, rows));
    }
  return out;
}

PatchTokens window_reverse(const std::vector<ad::Var>& windows, int window, int grid_h, int grid_w) {
  if (window < 1 || grid_h % window != 0 || grid_w % window != 0)
    throw ConfigError("window_reverse: grid not divisible by window");
  const int per_row = grid_w / window;
  if (static_cast<int>(windows.size()) != (grid_h / window) * per_row)
    throw DimensionError("window_reverse: window count does not match grid");
  const int slots = window * window;
  ad::Var stacked = windows.size() == 1 ? windows[0] : ad::concat_rows(windows);
  std::vector<int> rows(static_cast<std::size_t>(grid_h) * grid_w);
  for (int i = 0; i < grid_h; ++i)
    for (int j = 0; j < grid_w; ++j) {
      const int w = (i / window) * per_row + j / window;
      rows[i * grid_w + j] = w * slots + (i % window) * window + j % window;
    }
  return {ad::gather_rows(stacked, rows), grid_h, grid_w};
}

std::vector<ad::Var> attach_latent_tokens(const std::vector<ad::Var>& windows, const LatentTokens& lat) {
  std::vector<ad::Var> out;
  out.reserve(windows.size());
  for (const auto& w : windows) {
    if (w.dim(1) != lat.tensor.dim(1))
      throw DimensionError("attach_latent_tokens: window width " + std::to_string(w.dim(1)) + " vs latent width " +
                           std::to_string(lat.tensor.dim(1)));
    const ad::Var parts[] = {w, lat.tensor};
    out.push_back(ad::concat_rows(parts));
  }
  return out;
}

WindowAttentionOutput windowed_self_attention(const std::vector<ad::Var>& aug_windows, const AttentionParams& params,
                                              int shift, int grid_h, int grid_w, bool keep_weights) {
  WindowAttentionOutput result;
  if (aug_windows.empty()) return result;
  const int m = params.window;
  const int slots = m * m;
  const int n = aug_windows[0].dim(0);
  const int c = aug_windows[0].dim(1);
  const int heads = params.heads;
  const int dh = c / heads;
  if (n < slots || c % heads != 0) throw DimensionError("windowed_self_attention: malformed window");
  const int t = n - slots;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  // Relative position bias, patch pairs only.
  std::vector<ad::Var> bias(heads);
  for (int h = 0; h < heads; ++h) {
    std::vector<int> idx(static_cast<std::size_t>(n) * n, -1);
    for (int a = 0; a < slots; ++a)
      for (int b = 0; b < slots; ++b) {
        const int dy = a / m - b / m + m - 1;
        const int dx = a % m - b % m + m - 1;
        idx[a * n + b] = (dy * (2 * m - 1) + dx) * heads + h;
      }
    bias[h] = ad::gather(params.rel_bias, std::move(idx), {n, n});
  }

  const int windows_per_row = shift > 0 ? grid_w / m : 1;
  for (std::size_t w = 0; w < aug_windows.size(); ++w) {
    const auto& win = aug_windows[w];
    if (win.dim(0) != n || win.dim(1) != c) throw DimensionError("windowed_self_attention: ragged windows");
    ad::Var mask;
    if (shift > 0) {
      const int wy = static_cast<int>(w) / windows_per_row, wx = static_cast<int>(w) % windows_per_row;
      std::vector<int> label(slots);
      for (int a = 0; a < slots; ++a)
        label[a] = region_label(wy * m + a / m, grid_h, m, shift) * 3 + region_label(wx * m + a % m, grid_w, m, shift);
      std::vector<double> mv(static_cast<std::size_t>(n) * n, 0.0);
      for (int a = 0; a < slots; ++a)
        for (int b = 0; b < slots; ++b)
          if (label[a] != label[b]) mv[a * n + b] = kMaskValue;
      mask = ad::constant({n, n}, std::move(mv));
    }
    ad::Var qkv = ad::linear(win, params.qkv_weight, params.qkv_bias);
    std::vector<ad::Var> head_out;
    std::vector<ad::Var> head_weights;
    for (int h = 0; h < heads; ++h) {
      ad::Var q = ad::slice_cols(qkv, h * dh, (h + 1) * dh);
      ad::Var k = ad::slice_cols(qkv, c + h * dh, c + (h + 1) * dh);
      ad::Var v = ad::slice_cols(qkv, 2 * c + h * dh, 2 * c + (h + 1) * dh);
      ad::Var s = ad::add(ad::scale(ad::matmul(q, ad::transpose(k)), scale), bias[h]);
      if (mask) s = ad::add(s, mask);
      ad::Var p = ad::softmax_rows(s);
      if (keep_weights) head_weights.push_back(p);
      head_out.push_back(ad::matmul(p, v));
    }
    ad::Var merged = heads == 1 ? head_out[0] : ad::concat_cols(head_out);
    ad::Var out = ad::linear(merged, params.proj_weight, params.proj_bias);
    check_finite(out, "windowed_self_attention");
    if (t == 0) {
      result.patches.push_back(out);
    } else {
      std::vector<int> prow(slots), lrow(t);
      for (int i = 0; i < slots; ++i) prow[i] = i;
      for (int i = 0; i < t; ++i) lrow[i] = slots + i;
      result.patches.push_back(ad::gather_rows(out, prow));
      result.latents.push_back(ad::gather_rows(out, lrow));
    }
    if (keep_weights) result.weights.push_back(std::move(head_weights));
  }
  return result;
}

LatentTokens merge_latent_replicas(const std::vector<ad::Var>& replicas, const ad::Var& gamma, const ad::Var& beta) {
  if (replicas.empty()) throw ArgumentError("merge_latent_replicas: no replicas");
  for (const auto& r : replicas)
    if (r.shape() != replicas[0].shape()) throw DimensionError("merge_latent_replicas: replica shapes differ");
  ad::Var total = replicas.size() == 1 ? replicas[0] : ad::add_n(replicas);
  return {ad::layer_norm(total, gamma, beta)};
}

LatentTokens merge_latent_replicas(const std::vector<ad::Var>& replicas) {
  if (replicas.empty()) throw ArgumentError("merge_latent_replicas: no replicas");
  const int c = replicas[0].dim(1);
  return merge_latent_replicas(replicas, ad::full({c}, 1.0), ad::zeros({c}));
}

std::pair<PatchTokens, LatentTokens> stage_transition(const PatchTokens& patches, const LatentTokens& lat,
                                                      const StageTransition& params) {
  const int gh = patches.grid_h, gw = patches.grid_w;
  if (gh % 2 != 0 || gw % 2 != 0) throw ConfigError("stage_transition: grid sides must be even");
  const int c = patches.tensor.dim(1);
  const int oh = gh / 2, ow = gw / 2;
  std::vector<int> idx;
  idx.reserve(static_cast<std::size_t>(gh) * gw * c);
  const int offsets[4][2] = {{0, 0}, {1, 0}, {0, 1}, {1, 1}};
  for (int i = 0; i < oh; ++i)
    for (int j = 0; j < ow; ++j)
      for (const auto& o : offsets) {
        const int src = (2 * i + o[0]) * gw + 2 * j + o[1];
        for (int k = 0; k < c; ++k) idx.push_back(src * c + k);
      }
  ad::Var merged = ad::gather(patches.tensor, std::move(idx), {oh * ow, 4 * c});
  merged = ad::layer_norm(linear_no_bias(merged, params.merge_weight), params.merge_gamma, params.merge_beta);
  LatentTokens next_lat;
  if (lat.tensor) {
    next_lat.tensor =
        ad::layer_norm(ad::linear(lat.tensor, params.lat_weight, params.lat_bias), params.lat_gamma, params.lat_beta);
  }
  return {PatchTokens{merged, oh, ow}, next_lat};
}

ad::Var predict_latents(const LatentTokens& lat, const PredictionHead& head, const AverageLatent& w_bar) {
  if (lat.tensor.rank() != 2 || lat.tensor.dim(1) != head.w1.dim(0))
    throw DimensionError("predict_latents: latent width does not match head input " + std::to_string(head.w1.dim(0)));
  const int d = head.w3.dim(1);
  if (static_cast<int>(w_bar.value.size()) != d) throw DimensionError("predict_latents: average latent width");
  ad::Var h = ad::tanh(ad::linear(lat.tensor, head.w1, head.b1));
  h = ad::tanh(ad::linear(h, head.w2, head.b2));
  ad::Var out = ad::linear(h, head.w3, head.b3);
  return ad::add_row_bias(out, ad::constant({d}, w_bar.value));
}

Encoder::Encoder(const EncoderConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  const int c0 = cfg_.base_channels;
  const int pin = 3 * cfg_.patch_size * cfg_.patch_size;
  embed_weight = normal_param({pin, c0}, 1.0 / std::sqrt(pin), rng);
  embed_bias = constant_param({c0}, 0.0);
  embed_gamma = constant_param({c0}, 1.0);
  embed_beta = constant_param({c0}, 0.0);
  if (cfg_.latent_token_count > 0) latent_init = normal_param({cfg_.latent_token_count, c0}, 0.02, rng);

  for (int s = 1; s <= cfg_.stages; ++s) {
    const int c = cfg_.stage_channels(s);
    const int m = cfg_.effective_window(s);
    const int hidden = c * cfg_.mlp_ratio;
    const double std_c = 1.0 / std::sqrt(c);
    std::vector<EncoderBlock> stage;
    for (int b = 0; b < cfg_.stage_depths[s - 1]; ++b) {
      EncoderBlock blk;
      blk.shifted = b % 2 == 1 && cfg_.grid_side(s) > m;
      blk.attn.heads = cfg_.heads_per_stage[s - 1];
      blk.attn.window = m;
      blk.attn.qkv_weight = normal_param({c, 3 * c}, std_c, rng);
      blk.attn.qkv_bias = constant_param({3 * c}, 0.0);
      blk.attn.proj_weight = normal_param({c, c}, std_c, rng);
      blk.attn.proj_bias = constant_param({c}, 0.0);
      blk.attn.rel_bias = normal_param({(2 * m - 1) * (2 * m - 1), blk.attn.heads}, 0.02, rng);
      blk.norm1_gamma = constant_param({c}, 1.0);
      blk.norm1_beta = constant_param({c}, 0.0);
      blk.norm2_gamma = constant_param({c}, 1.0);
      blk.norm2_beta = constant_param({c}, 0.0);
      blk.lat_gamma = constant_param({c}, 1.0);
      blk.lat_beta = constant_param({c}, 0.0);
      blk.mlp_w1 = normal_param({c, hidden}, std_c, rng);
      blk.mlp_b1 = constant_param({hidden}, 0.0);
      blk.mlp_w2 = normal_param({hidden, c}, 1.0 / std::sqrt(hidden), rng);
      blk.mlp_b2 = constant_param({c}, 0.0);
      stage.push_back(std::move(blk));
    }
    blocks.push_back(std::move(stage));
    if (s < cfg_.stages) {
      StageTransition tr;
      tr.merge_weight = normal_param({4 * c, 2 * c}, 1.0 / std::sqrt(4 * c), rng);
      tr.merge_gamma = constant_param({2 * c}, 1.0);
      tr.merge_beta = constant_param({2 * c}, 0.0);
      tr.lat_weight = normal_param({c, 2 * c}, std_c, rng);
      tr.lat_bias = constant_param({2 * c}, 0.0);
      tr.lat_gamma = constant_param({2 * c}, 1.0);
      tr.lat_beta = constant_param({2 * c}, 0.0);
      transitions.push_back(std::move(tr));
    }
  }

  const int cl = cfg_.stage_channels(cfg_.stages);
  const int hid = cfg_.head_hidden;
  head.w1 = normal_param({cl, hid}, 1.0 / std::sqrt(cl), rng);
  head.b1 = constant_param({hid}, 0.0);
  head.w2 = normal_param({hid, hid}, 1.0 / std::sqrt(hid), rng);
  head.b2 = constant_param({hid}, 0.0);
  head.w3 = normal_param({hid, cfg_.w_dim}, 0.1 / std::sqrt(hid), rng);
  head.b3 = constant_param({cfg_.w_dim}, 0.0);
}

PatchTokens Encoder::embed(const ad::Var& image) const {
  const int size = cfg_.image_size, p = cfg_.patch_size, g = size / p;
  if (image.rank() != 3 || image.dim(0) != 3 || image.dim(1) != size || image.dim(2) != size)
    throw ArgumentError("encoder expects a 3x" + std::to_string(size) + "x" + std::to_string(size) + " image");
  std::vector<int> idx;
  idx.reserve(static_cast<std::size_t>(g) * g * 3 * p * p);
  for (int i = 0; i < g; ++i)
    for (int j = 0; j < g; ++j)
      for (int ch = 0; ch < 3; ++ch)
        for (int dy = 0; dy < p; ++dy)
          for (int dx = 0; dx < p; ++dx) idx.push_back((ch * size + i * p + dy) * size + j * p + dx);
  ad::Var patches = ad::gather(image, std::move(idx), {g * g, 3 * p * p});
  ad::Var tokens = ad::layer_norm(ad::linear(patches, embed_weight, embed_bias), embed_gamma, embed_beta);
  return {tokens, g, g};
}

void Encoder::run_block(const EncoderBlock& block, int stage, PatchTokens& x, LatentTokens* lat) const {
  const int g = x.grid_h;
  const int m = cfg_.effective_window(stage);
  const int shift = block.shifted ? m / 2 : 0;
  PatchTokens rolled = x;
  if (shift > 0) rolled.tensor = ad::gather_rows(x.tensor, roll_index(g, g, shift));
  std::vector<ad::Var> windows = window_partition(rolled, m);
  if (lat) windows = attach_latent_tokens(windows, *lat);
  WindowAttentionOutput att = windowed_self_attention(windows, block.attn, shift, g, g);

  ad::Var attn_tokens = window_reverse(att.patches, m, g, g).tensor;
  if (shift > 0) attn_tokens = ad::gather_rows(attn_tokens, unroll_index(g, g, shift));
  ad::Var h = ad::add(x.tensor, ad::layer_norm(attn_tokens, block.norm1_gamma, block.norm1_beta));
  ad::Var mlp = ad::linear(ad::gelu(ad::linear(h, block.mlp_w1, block.mlp_b1)), block.mlp_w2, block.mlp_b2);
  x.tensor = ad::add(h, ad::layer_norm(mlp, block.norm2_gamma, block.norm2_beta));

  if (lat) {
    std::vector<ad::Var> replicas;
    replicas.reserve(att.latents.size());
    for (const auto& l : att.latents) replicas.push_back(ad::add(lat->tensor, l));
    *lat = merge_latent_replicas(replicas, block.lat_gamma, block.lat_beta);
  }
}

PyramidFeatures Encoder::run(const ad::Var& image, LatentTokens* lat) const {
  PyramidFeatures pyramid;
  PatchTokens x = embed(image);
  for (int s = 1; s <= cfg_.stages; ++s) {
    for (const auto& blk : blocks[s - 1]) run_block(blk, s, x, lat);
    pyramid.maps.push_back({x.tensor, x.grid_h});
    if (s < cfg_.stages) {
      auto [nx, nl] = stage_transition(x, lat ? *lat : LatentTokens{}, transitions[s - 1]);
      x = nx;
      if (lat) *lat = nl;
    }
  }
  return pyramid;
}

EncodeOutput Encoder::encode(const ad::Var& image) const {
  EncodeOutput out;
  if (cfg_.latent_token_count == 0) {
    out.pyramid = run(image, nullptr);
    return out;
  }
  out.latents.tensor = latent_init;
  out.pyramid = run(image, &out.latents);
  return out;
}

PyramidFeatures Encoder::encode_backbone(const ad::Var& image) const { return run(image, nullptr); }

NamedParams Encoder::backbone_parameters() const {
  NamedParams out{{"encoder.embed.weight", embed_weight},
                  {"encoder.embed.bias", embed_bias},
                  {"encoder.embed.norm.gamma", embed_gamma},
                  {"encoder.embed.norm.beta", embed_beta}};
  if (latent_init) out.emplace_back("encoder.latent_tokens", latent_init);
  for (std::size_t s = 0; s < blocks.size(); ++s) {
    for (std::size_t b = 0; b < blocks[s].size(); ++b) {
      const auto& k = blocks[s][b];
      const std::string p = "encoder.stage" + std::to_string(s + 1) + ".block" + std::to_string(b) + ".";
      out.emplace_back(p + "attn.qkv.weight", k.attn.qkv_weight);
      out.emplace_back(p + "attn.qkv.bias", k.attn.qkv_bias);
      out.emplace_back(p + "attn.proj.weight", k.attn.proj_weight);
      out.emplace_back(p + "attn.proj.bias", k.attn.proj_bias);
      out.emplace_back(p + "attn.rel_bias", k.attn.rel_bias);
      out.emplace_back(p + "norm1.gamma", k.norm1_gamma);
      out.emplace_back(p + "norm1.beta", k.norm1_beta);
      out.emplace_back(p + "norm2.gamma", k.norm2_gamma);
      out.emplace_back(p + "norm2.beta", k.norm2_beta);
      out.emplace_back(p + "lat_norm.gamma", k.lat_gamma);
      out.emplace_back(p + "lat_norm.beta", k.lat_beta);
      out.emplace_back(p + "mlp.w1", k.mlp_w1);
      out.emplace_back(p + "mlp.b1", k.mlp_b1);
      out.emplace_back(p + "mlp.w2", k.mlp_w2);
      out.emplace_back(p + "mlp.b2", k.mlp_b2);
    }
    if (s < transitions.size()) {
      const auto& t = transitions[s];
      const std::string p = "encoder.transition" + std::to_string(s + 1) + ".";
      out.emplace_back(p + "merge.weight", t.merge_weight);
      out.emplace_back(p + "merge.gamma", t.merge_gamma);
      out.emplace_back(p + "merge.beta", t.merge_beta);
      out.emplace_back(p + "latent.weight", t.lat_weight);
      out.emplace_back(p + "latent.bias", t.lat_bias);
      out.emplace_back(p + "latent.gamma", t.lat_gamma);
      out.emplace_back(p + "latent.beta", t.lat_beta);
    }
  }
  return out;
}

NamedParams Encoder::head_parameters() const {
  return {{"head.w1", head.w1}, {"head.b1", head.b1}, {"head.w2", head.w2},
          {"head.b2", head.b2}, {"head.w3", head.w3}, {"head.b3", head.b3}};
}

NamedParams Encoder::named_parameters() const {
  NamedParams out = backbone_parameters();
  for (auto& p : head_parameters()) out.push_back(std::move(p));
  return out;
}

AttentionKind attention_kind_from_string(const std::string& name) {
  std::string k;
  for (char ch : name)
    if (ch != '-' && ch != '_') k.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  if (k == "msa") return AttentionKind::MSA;
  if (k == "wmsa") return AttentionKind::WMSA;
  if (k == "wmsa*" || k == "wmsalatent" || k == "wmsastar") return AttentionKind::WMSA_LATENT;
  throw ArgumentError("unknown attention kind '" + name + "' (expected msa, w-msa, w-msa*)");
}

namespace {

std::uint64_t checked_mul(std::uint64_t a, std::uint64_t b) {
  std::uint64_t r;
  if (__builtin_mul_overflow(a, b, &r)) throw ArgumentError("complexity: result overflows 64 bits");
  return r;
}

std::uint64_t checked_add(std::uint64_t a, std::uint64_t b) {
  std::uint64_t r;
  if (__builtin_add_overflow(a, b, &r)) throw ArgumentError("complexity: result overflows 64 bits");
  return r;
}

}  // namespace

std::uint64_t complexity(AttentionKind kind, std::uint64_t h, std::uint64_t w, std::uint64_t C, std::uint64_t M,
                         std::uint64_t T) {
  if (h == 0 || w == 0 || C == 0) throw ArgumentError("complexity: h, w, C must be positive");
  const std::uint64_t hw = checked_mul(h, w);
  const std::uint64_t c2 = checked_mul(C, C);
  switch (kind) {
    case AttentionKind::MSA:
      return checked_add(checked_mul(4, checked_mul(hw, c2)), checked_mul(2, checked_mul(checked_mul(hw, hw), C)));
    case AttentionKind::WMSA:
    case AttentionKind::WMSA_LATENT: {
      if (M == 0) throw ArgumentError("complexity: M must be positive");
      const std::uint64_t n = kind == AttentionKind::WMSA ? hw : checked_add(hw, T);
      return checked_add(checked_mul(4, checked_mul(n, c2)),
                         checked_mul(2, checked_mul(checked_mul(M, M), checked_mul(n, C))));
    }
  }
  throw ArgumentError("complexity: unknown kind");
}

}  // namespace latinv
