#include "latinv/pipeline.hpp"

#include <cmath>

#include "latinv/errors.hpp"

namespace latinv {

namespace {

ad::Var code_var(const LatentCode& w) { return ad::constant({w.layers(), w.channels()}, w.values()); }

LatentCode code_from_var(const ad::Var& v) { return LatentCode(v.dim(0), v.dim(1), v.value()); }

int mix_index(double param, const char* mode) {
  if (!std::isfinite(param) || param != std::floor(param))
    throw ArgumentError(std::string(mode) + " mixing needs an integer layer index");
  return static_cast<int>(param);
}

}  // namespace

Image render(const Models& models, const LatentCode& w, const PyramidFeatures* pyramid, BetaWeights beta,
             const FlowField* flow, const PipelineHooks* hooks) {
  ad::NoGradGuard guard;
  const auto& gen = models.generator;
  const ad::Var wv = code_var(w);
  if (!pyramid) return image_from_var(gen.synthesize(wv));
  if (hooks && hooks->on_smart_pyramid) hooks->on_smart_pyramid(*pyramid);
  const int layer = models.config.smart.layer;
  auto [feature, partial] = gen.synthesize_to_layer(wv, layer);
  FeatureMap refined = flow ? smart_refine_with_flow(feature, *pyramid, beta, *flow, models.smart)
                            : smart_refine(feature, *pyramid, beta, models.smart);
  return image_from_var(gen.synthesize_from_layer(refined, partial, wv, layer));
}

InversionResult invert(const Image& image, const Models& models, BetaWeights beta) {
  ad::NoGradGuard guard;
  EncodeOutput enc = models.encoder.encode(image_to_var(image));
  InversionResult out;
  out.w_inv = code_from_var(models.encoder.predict(enc.latents, models.w_bar));
  out.pyramid = std::move(enc.pyramid);
  out.image_baseline = render(models, out.w_inv, nullptr, beta);
  out.image_refined = render(models, out.w_inv, &out.pyramid, beta);
  return out;
}

std::pair<LatentCode, Image> invert_baseline(const Image& image, const Models& models) {
  ad::NoGradGuard guard;
  EncodeOutput enc = models.encoder.encode(image_to_var(image));
  LatentCode w = code_from_var(models.encoder.predict(enc.latents, models.w_bar));
  Image img = render(models, w, nullptr, {});
  return {std::move(w), std::move(img)};
}

Image edit(const InversionResult& inv, const EditDirection& dir, double alpha, BetaWeights beta, const Models& models,
           const PipelineHooks* hooks) {
  const LatentCode w_edit = apply_edit(inv.w_inv, dir, alpha);
  return render(models, w_edit, &inv.pyramid, beta, nullptr, hooks);
}

Image edit(const Image& image, const EditDirection& dir, double alpha, BetaWeights beta, const Models& models) {
  return edit(invert(image, models, beta), dir, alpha, beta, models);
}

MixMode mix_mode_from_string(const std::string& name) {
  if (name == "progressive") return MixMode::PROGRESSIVE;
  if (name == "exchange") return MixMode::EXCHANGE;
  if (name == "interpolate") return MixMode::INTERPOLATE;
  throw ArgumentError("unknown mix mode '" + name + "' (expected progressive, exchange, interpolate)");
}

Image mix(const InversionResult& source, const InversionResult& reference, MixMode mode, double param,
          const Models& models, bool use_smart, const PipelineHooks* hooks) {
  LatentCode w;
  switch (mode) {
    case MixMode::PROGRESSIVE:
      w = style_mix_progressive(source.w_inv, reference.w_inv, mix_index(param, "progressive"));
      break;
    case MixMode::EXCHANGE:
      w = style_mix_exchange(source.w_inv, reference.w_inv, mix_index(param, "exchange"));
      break;
    case MixMode::INTERPOLATE:
      w = style_mix_interpolate(reference.w_inv, source.w_inv, param);
      break;
  }
  return render(models, w, use_smart ? &source.pyramid : nullptr, {}, nullptr, hooks);
}

Image mix(const Image& source, const Image& reference, MixMode mode, double param, const Models& models,
          bool use_smart) {
  return mix(invert(source, models), invert(reference, models), mode, param, models, use_smart);
}

std::vector<std::vector<Image>> beta_sweep(const InversionResult& inv, const std::optional<EditDirection>& dir,
                                           double alpha, const std::vector<double>& beta1_grid,
                                           const std::vector<double>& beta2_grid, const Models& models) {
  if (beta1_grid.empty() || beta2_grid.empty()) throw ArgumentError("beta_sweep: grids must be non-empty");
  const LatentCode w = dir ? apply_edit(inv.w_inv, *dir, alpha) : inv.w_inv;
  std::vector<std::vector<Image>> grid;
  for (double b1 : beta1_grid) {
    std::vector<Image> row;
    for (double b2 : beta2_grid) row.push_back(render(models, w, &inv.pyramid, {b1, b2}));
    grid.push_back(std::move(row));
  }
  return grid;
}

Image pose_edit(const InversionResult& inv, const EditDirection& dir, double alpha, const FlowField& flow,
                BetaWeights beta, const Models& models, const PipelineHooks* hooks) {
  const int side = models.config.smart.feature_side;
  if (flow.height != side || flow.width != side)
    throw ArgumentError("pose_edit: flow field must be 2 x " + std::to_string(side) + " x " + std::to_string(side));
  const LatentCode w_edit = apply_edit(inv.w_inv, dir, alpha);
  return render(models, w_edit, &inv.pyramid, beta, &flow, hooks);
}

}  // namespace latinv
