#include "latinv/models.hpp"

#include "latinv/errors.hpp"

namespace latinv {

void ModelConfig::validate() const {
  generator.validate();
  encoder.validate();
  smart.validate();
  if (encoder.latent_token_count != generator.style_count())
    throw ConfigError("latent token count " + std::to_string(encoder.latent_token_count) +
                      " must equal the generator style count " + std::to_string(generator.style_count()));
  if (encoder.w_dim != generator.w_dim) throw ConfigError("encoder head width must equal the generator w_dim");
  if (smart.layer < 1 || smart.layer > generator.conv_layer_count())
    throw ConfigError("smart layer must be a generator conv layer");
  const SmartConfig expect = smart_config_for(encoder, generator, smart.layer);
  if (smart.feature_channels != expect.feature_channels || smart.feature_side != expect.feature_side ||
      smart.pyramid_channels != expect.pyramid_channels || smart.pyramid_sides != expect.pyramid_sides)
    throw ConfigError("smart geometry does not match the encoder and generator");
  if (average_samples < 1) throw ConfigError("average_samples must be >= 1");
}

ModelConfig resolve_model_config(ModelConfig cfg) {
  cfg.encoder.latent_token_count = cfg.generator.style_count();
  cfg.encoder.w_dim = cfg.generator.w_dim;
  const SmartConfig geom = smart_config_for(cfg.encoder, cfg.generator, cfg.smart.layer);
  cfg.smart.feature_channels = geom.feature_channels;
  cfg.smart.feature_side = geom.feature_side;
  cfg.smart.pyramid_channels = geom.pyramid_channels;
  cfg.smart.pyramid_sides = geom.pyramid_sides;
  cfg.validate();
  return cfg;
}

nlohmann::json to_json(const ModelConfig& cfg) {
  return {{"generator", to_json(cfg.generator)},
          {"encoder", to_json(cfg.encoder)},
          {"smart", to_json(cfg.smart)},
          {"average_samples", cfg.average_samples},
          {"seed", cfg.seed}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  if (j.contains("generator")) cfg.generator = generator_config_from_json(j.at("generator"));
  // Encoder and SMART blocks are resolved against the generator, so parse
  // without validating first.
  const nlohmann::json enc = j.value("encoder", nlohmann::json::object());
  EncoderConfig e;
  e.image_size = enc.value("image_size", cfg.generator.output_size);
  e.patch_size = enc.value("patch_size", e.patch_size);
  e.window_size = enc.value("window_size", e.window_size);
  e.stages = enc.value("stages", e.stages);
  e.stage_depths = enc.value("stage_depths", e.stage_depths);
  e.base_channels = enc.value("base_channels", e.base_channels);
  e.heads_per_stage = enc.value("heads_per_stage", e.heads_per_stage);
  e.mlp_ratio = enc.value("mlp_ratio", e.mlp_ratio);
  e.head_hidden = enc.value("head_hidden", e.head_hidden);
  cfg.encoder = e;
  const nlohmann::json sm = j.value("smart", nlohmann::json::object());
  cfg.smart.layer = sm.value("layer", cfg.smart.layer);
  cfg.smart.attn_width = sm.value("attn_width", cfg.smart.attn_width);
  cfg.smart.heads = sm.value("heads", cfg.smart.heads);
  cfg.smart.ffn_hidden = sm.value("ffn_hidden", 2 * cfg.generator.layer_channels(cfg.smart.layer));
  cfg.average_samples = j.value("average_samples", cfg.average_samples);
  cfg.seed = j.value("seed", cfg.seed);
  return resolve_model_config(cfg);
}

NamedParams Models::named_parameters() const {
  NamedParams out = generator.named_parameters();
  for (auto& p : encoder.named_parameters()) out.push_back(std::move(p));
  for (auto& p : smart.named_parameters()) out.push_back(std::move(p));
  return out;
}

Models make_models(const ModelConfig& cfg, bool compute_average) {
  cfg.validate();
  Models m;
  m.config = cfg;
  m.generator = Generator(cfg.generator, cfg.seed);
  m.encoder = Encoder(cfg.encoder, cfg.seed + 1);
  m.smart = init_smart_params(cfg.smart, cfg.seed + 2);
  if (compute_average) m.w_bar = m.generator.average_latent(cfg.average_samples, cfg.seed + 3);
  set_trainable(m.generator.named_parameters(), false);
  return m;
}

}  // namespace latinv
