#pragma once

// Inversion, editing, style mixing, beta sweeps, and flow-driven edits over a
// loaded model set. Every edit reuses the pyramid computed at inversion time
// as the SMART key/value source.

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "latinv/image.hpp"
#include "latinv/latent_spaces.hpp"
#include "latinv/models.hpp"
#include "latinv/smart.hpp"

namespace latinv {

struct InversionResult {
  LatentCode w_inv;
  Image image_baseline;
  Image image_refined;
  PyramidFeatures pyramid;
};

/// Observation points for tests and diagnostics.
struct PipelineHooks {
  /// Called with the pyramid that SMART reads keys and values from.
  std::function<void(const PyramidFeatures&)> on_smart_pyramid;
};

InversionResult invert(const Image& image, const Models& models, BetaWeights beta = {});
std::pair<LatentCode, Image> invert_baseline(const Image& image, const Models& models);

/// Synthesizes `w`, refining the SMART-layer features against `pyramid` when
/// one is given.
Image render(const Models& models, const LatentCode& w, const PyramidFeatures* pyramid, BetaWeights beta,
             const FlowField* flow = nullptr, const PipelineHooks* hooks = nullptr);

Image edit(const InversionResult& inv, const EditDirection& dir, double alpha, BetaWeights beta, const Models& models,
           const PipelineHooks* hooks = nullptr);
Image edit(const Image& image, const EditDirection& dir, double alpha, BetaWeights beta, const Models& models);

enum class MixMode { PROGRESSIVE, EXCHANGE, INTERPOLATE };
MixMode mix_mode_from_string(const std::string& name);

/// Mixes the source and reference inversions. `param` is k for progressive
/// and exchange, sigma for interpolate. With `use_smart`, features are
/// refined against the source pyramid at beta (1, 1).
Image mix(const InversionResult& source, const InversionResult& reference, MixMode mode, double param,
          const Models& models, bool use_smart, const PipelineHooks* hooks = nullptr);
Image mix(const Image& source, const Image& reference, MixMode mode, double param, const Models& models,
          bool use_smart);

/// grid[i][j] renders (beta1_grid[i], beta2_grid[j]); without a direction
/// the cells are refined inversions.
std::vector<std::vector<Image>> beta_sweep(const InversionResult& inv, const std::optional<EditDirection>& dir,
                                           double alpha, const std::vector<double>& beta1_grid,
                                           const std::vector<double>& beta2_grid, const Models& models);

/// Like edit, with SMART targets remapped by `flow` at the SMART layer.
Image pose_edit(const InversionResult& inv, const EditDirection& dir, double alpha, const FlowField& flow,
                BetaWeights beta, const Models& models, const PipelineHooks* hooks = nullptr);

}  // namespace latinv
