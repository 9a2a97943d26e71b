#pragma once

// The full model set: frozen generator, encoder with prediction head, SMART
// block, and the average latent the head is residual to.

#include <cstdint>

#include <json.hpp>

#include "latinv/encoder.hpp"
#include "latinv/generator.hpp"
#include "latinv/smart.hpp"

namespace latinv {

struct ModelConfig {
  GeneratorConfig generator;
  EncoderConfig encoder;
  SmartConfig smart;
  int average_samples = 4096;
  std::uint64_t seed = 1;

  /// Checks the cross-model constraints (T = L, head width = d, SMART geometry).
  void validate() const;
};

/// Fills derived fields (T, d, SMART geometry) from the generator and encoder
/// blocks; `smart.layer` and the SMART widths are kept.
ModelConfig resolve_model_config(ModelConfig cfg);

nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

struct Models {
  ModelConfig config;
  Generator generator;
  Encoder encoder;
  SmartParams smart;
  AverageLatent w_bar;

  NamedParams named_parameters() const;
};

/// Seeds every component from cfg.seed. Without `compute_average`, w_bar is
/// left empty for the caller to fill.
Models make_models(const ModelConfig& cfg, bool compute_average = true);

}  // namespace latinv
