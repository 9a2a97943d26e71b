#include "latinv/training.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numeric>
#include <sstream>

#include "latinv/errors.hpp"
#include "latinv/pipeline.hpp"

namespace latinv {

void LossWeights::validate() const {
  for (double l : {lambda1, lambda2, lambda3, lambda4})
    if (!(l >= 0.0) || !std::isfinite(l)) throw ConfigError("loss weights must be finite and non-negative");
}

// --- plugins -------------------------------------------------------------------

std::vector<double> Embedder::embed(const Image& image) const {
  ad::NoGradGuard guard;
  return embed_layers(image_to_var(image)).back().value();
}

RandomConvExtractor::RandomConvExtractor(std::uint64_t seed, std::vector<int> widths) {
  Rng rng(seed);
  int in = 3;
  for (int w : widths) {
    weights_.push_back(ad::constant({w, in, 3, 3}, [&] {
      std::vector<double> v = standard_normal(static_cast<std::size_t>(w) * in * 9, rng);
      const double s = std::sqrt(2.0 / (in * 9));
      for (auto& x : v) x *= s;
      return v;
    }()));
    std::vector<double> b = standard_normal(w, rng);
    for (auto& x : b) x *= 0.1;
    biases_.push_back(ad::constant({w}, std::move(b)));
    in = w;
  }
}

std::vector<ad::Var> RandomConvExtractor::features(const ad::Var& image) const {
  std::vector<ad::Var> out;
  ad::Var x = image;
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    if (i > 0) x = ad::avg_pool2x(x);
    x = ad::leaky_relu(ad::add_channel_bias(ad::conv2d(x, weights_[i]), biases_[i]), 0.2);
    out.push_back(x);
  }
  return out;
}

RandomConvEmbedder::RandomConvEmbedder(std::uint64_t seed, std::vector<int> widths) : net_(seed, std::move(widths)) {}

std::vector<ad::Var> RandomConvEmbedder::embed_layers(const ad::Var& image) const {
  std::vector<ad::Var> out;
  for (ad::Var f : net_.features(image)) {
    while (f.dim(1) > 4 && f.dim(1) % 2 == 0) f = ad::avg_pool2x(f);
    out.push_back(ad::unit_normalize(f));
  }
  return out;
}

namespace {

struct Registry {
  std::mutex mu;
  std::map<std::string, ExtractorFactory> extractors;
  std::map<std::string, EmbedderFactory> embedders;
};

Registry& registry() {
  static Registry* r = [] {
    auto* init = new Registry;
    init->extractors["random-conv"] = [](std::uint64_t seed) {
      return std::make_shared<const RandomConvExtractor>(seed);
    };
    init->embedders["random-conv"] = [](std::uint64_t seed) {
      return std::make_shared<const RandomConvEmbedder>(seed);
    };
    return init;
  }();
  return *r;
}

}  // namespace

void register_feature_extractor(const std::string& name, ExtractorFactory factory) {
  auto& r = registry();
  std::lock_guard lock(r.mu);
  r.extractors[name] = std::move(factory);
}

void register_embedder(const std::string& name, EmbedderFactory factory) {
  auto& r = registry();
  std::lock_guard lock(r.mu);
  r.embedders[name] = std::move(factory);
}

std::shared_ptr<const FeatureExtractor> make_feature_extractor(const std::string& name, std::uint64_t seed) {
  auto& r = registry();
  std::lock_guard lock(r.mu);
  auto it = r.extractors.find(name);
  if (it == r.extractors.end()) throw ConfigError("unregistered perceptual metric '" + name + "'");
  return it->second(seed);
}

std::shared_ptr<const Embedder> make_embedder(const std::string& name, std::uint64_t seed) {
  auto& r = registry();
  std::lock_guard lock(r.mu);
  auto it = r.embedders.find(name);
  if (it == r.embedders.end()) throw ConfigError("unregistered identity embedder '" + name + "'");
  return it->second(seed);
}

LossPlugins LossPlugins::defaults(std::uint64_t seed) {
  return {make_feature_extractor("random-conv", seed), make_embedder("random-conv", seed + 1)};
}

// --- losses --------------------------------------------------------------------

namespace {

void require_same_image(const ad::Var& a, const ad::Var& b, const char* op) {
  if (a.shape() != b.shape()) throw DimensionError(std::string(op) + ": image shapes differ");
}

ad::Var mean_of(std::vector<ad::Var> terms) {
  return ad::scale(terms.size() == 1 ? terms[0] : ad::add_n(terms), 1.0 / static_cast<double>(terms.size()));
}

}  // namespace

ad::Var loss_l2(const ad::Var& image, const ad::Var& inverted) {
  require_same_image(image, inverted, "loss_l2");
  return ad::mean(ad::square(ad::sub(image, inverted)));
}

ad::Var loss_perceptual(const ad::Var& image, const ad::Var& inverted, const FeatureExtractor* metric) {
  if (!metric) throw ConfigError("loss_perceptual: no perceptual metric registered");
  require_same_image(image, inverted, "loss_perceptual");
  auto fa = metric->features(image);
  auto fb = metric->features(inverted);
  std::vector<ad::Var> terms;
  for (std::size_t i = 0; i < fa.size(); ++i) terms.push_back(ad::mean(ad::square(ad::sub(fa[i], fb[i]))));
  return mean_of(std::move(terms));
}

ad::Var loss_id(const ad::Var& image, const ad::Var& inverted, const Embedder* embedder) {
  if (!embedder) throw ConfigError("loss_id: no identity embedder registered");
  require_same_image(image, inverted, "loss_id");
  auto ea = embedder->embed_layers(image);
  auto eb = embedder->embed_layers(inverted);
  std::vector<ad::Var> terms;
  for (std::size_t i = 0; i < ea.size(); ++i)
    terms.push_back(ad::add_scalar(ad::scale(ad::sum(ad::mul(ea[i], eb[i])), -1.0), 1.0));
  return mean_of(std::move(terms));
}

LossTerms loss_image(const ad::Var& image, const ad::Var& inverted, const LossWeights& weights,
                     const LossPlugins& plugins) {
  weights.validate();
  LossTerms t;
  t.l2 = loss_l2(image, inverted);
  t.perceptual = loss_perceptual(image, inverted, plugins.perceptual.get());
  t.id = loss_id(image, inverted, plugins.identity.get());
  t.align = ad::zeros({1});
  const ad::Var parts[] = {ad::scale(t.l2, weights.lambda1), ad::scale(t.perceptual, weights.lambda2),
                           ad::scale(t.id, weights.lambda3)};
  t.total = ad::add_n(parts);
  return t;
}

ad::Var loss_align(const ad::Var& w_inv, const AverageLatent& w_bar) {
  if (w_inv.rank() != 2 || w_inv.dim(1) != static_cast<int>(w_bar.value.size()))
    throw DimensionError("loss_align: latent width does not match the average latent");
  const ad::Var diff = ad::add_row_bias(w_inv, ad::scale(ad::constant({w_inv.dim(1)}, w_bar.value), -1.0));
  return ad::mean(ad::row_norm(diff));
}

LossTerms loss_base(const ad::Var& image, const ad::Var& inverted, const ad::Var& w_inv, const AverageLatent& w_bar,
                    const LossWeights& weights, const LossPlugins& plugins) {
  LossTerms t = loss_image(image, inverted, weights, plugins);
  t.align = loss_align(w_inv, w_bar);
  t.total = ad::add(t.total, ad::scale(t.align, weights.lambda4));
  return t;
}

// --- optimizer -----------------------------------------------------------------

Ranger::Ranger(std::vector<ad::Var> params, RangerOptions options) : params_(std::move(params)), opt_(options) {
  if (!(opt_.lr > 0.0) || opt_.lookahead_k < 1) throw ConfigError("Ranger: invalid options");
  for (const auto& p : params_) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
    slow_.push_back(p.value());
  }
}

void Ranger::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void Ranger::step() {
  ++t_;
  const double b1 = opt_.beta1, b2 = opt_.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double b2t = std::pow(b2, static_cast<double>(t_));
  const double bc2 = 1.0 - b2t;
  const double rho_inf = 2.0 / (1.0 - b2) - 1.0;
  const double rho_t = rho_inf - 2.0 * static_cast<double>(t_) * b2t / bc2;
  const bool rectify = rho_t > opt_.rectify_threshold;
  double r = 0.0;
  if (rectify)
    r = std::sqrt((rho_t - 4.0) * (rho_t - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t));

  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    const auto& g = p.grad();
    if (g.empty()) continue;
    auto& val = p.mutable_value();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < val.size(); ++j) {
      m[j] = b1 * m[j] + (1.0 - b1) * g[j];
      v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
      // Before the variance estimate is tractable only the moments move.
      if (rectify) {
        const double m_hat = m[j] / bc1;
        const double v_hat = std::sqrt(v[j] / bc2);
        val[j] -= opt_.lr * r * m_hat / (v_hat + opt_.eps);
      }
    }
  }

  if (t_ % opt_.lookahead_k == 0) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& val = params_[i].mutable_value();
      auto& slow = slow_[i];
      for (std::size_t j = 0; j < val.size(); ++j) {
        slow[j] += opt_.lookahead_alpha * (val[j] - slow[j]);
        val[j] = slow[j];
      }
    }
  }
}

// --- training ------------------------------------------------------------------

Dataset make_self_inversion_dataset(const Generator& generator, int count, std::uint64_t seed) {
  if (count < 1) throw ArgumentError("dataset size must be >= 1");
  Rng rng(seed);
  Dataset data;
  for (int i = 0; i < count; ++i) {
    auto z = standard_normal(generator.config().z_dim, rng);
    LatentCode w = generator.broadcast_w(generator.map_z_to_w(z));
    data.images.push_back(generator.synthesize(w));
    data.latents.push_back(std::move(w));
  }
  return data;
}

TrainingStage::Kind stage_kind_from_string(const std::string& name) {
  if (name == "baseline") return TrainingStage::Kind::BASELINE;
  if (name == "smart") return TrainingStage::Kind::SMART;
  throw ArgumentError("unknown training stage '" + name + "' (expected baseline or smart)");
}

namespace {

struct SmartCache {
  PyramidFeatures pyramid;
  ad::Var w;
  FeatureMap feature;
  ad::Var partial;
};

double mean_total(const std::vector<StepLoss>& trace, std::size_t begin, std::size_t end) {
  double acc = 0.0;
  for (std::size_t i = begin; i < end; ++i) acc += trace[i].total;
  return acc / static_cast<double>(end - begin);
}

}  // namespace

TrainResult train(const TrainingStage& stage, const Dataset& data, Models& models, LossWeights weights,
                  const LossPlugins& plugins, std::uint64_t seed, const TrainCallback& on_step) {
  if (data.images.empty()) throw ArgumentError("train: dataset is empty");
  if (stage.steps < 0 || stage.batch_size < 1 || stage.plateau_window < 1)
    throw ConfigError("train: steps, batch_size, and plateau_window must be positive");
  const bool smart_stage = stage.kind == TrainingStage::Kind::SMART;
  if (smart_stage) weights.lambda4 = 0.0;
  weights.validate();

  const NamedParams encoder_params = models.encoder.named_parameters();
  const NamedParams smart_params = models.smart.named_parameters();
  set_trainable(models.generator.named_parameters(), false);
  set_trainable(encoder_params, !smart_stage);
  set_trainable(smart_params, smart_stage);
  const NamedParams& trainable = smart_stage ? smart_params : encoder_params;
  std::vector<ad::Var> leaves;
  for (const auto& [name, v] : trainable) leaves.push_back(v);
  RangerOptions ropt;
  ropt.lr = stage.learning_rate;
  Ranger opt(leaves, ropt);
  opt.zero_grad();

  const int layer = models.config.smart.layer;
  std::vector<SmartCache> cache;
  if (smart_stage) {
    ad::NoGradGuard guard;
    for (const auto& img : data.images) {
      SmartCache c;
      EncodeOutput enc = models.encoder.encode(image_to_var(img));
      c.w = models.encoder.predict(enc.latents, models.w_bar);
      c.pyramid = std::move(enc.pyramid);
      auto [f, partial] = models.generator.synthesize_to_layer(c.w, layer);
      c.feature = f;
      c.partial = partial;
      cache.push_back(std::move(c));
    }
  }
  std::vector<ad::Var> targets;
  for (const auto& img : data.images) targets.push_back(image_to_var(img));

  Rng rng(seed);
  std::vector<int> order(data.images.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();

  TrainResult result;
  const BetaWeights train_beta{1.0, 1.0};
  for (long step = 1; step <= stage.steps; ++step) {
    StepLoss rec;
    rec.step = step;
    const double inv_batch = 1.0 / stage.batch_size;
    for (int b = 0; b < stage.batch_size; ++b) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const int idx = order[cursor++];
      const ad::Var& target = targets[idx];
      LossTerms terms;
      if (smart_stage) {
        const auto& c = cache[idx];
        FeatureMap refined = smart_refine(c.feature, c.pyramid, train_beta, models.smart);
        ad::Var recon = models.generator.synthesize_from_layer(refined, c.partial, c.w, layer);
        terms = loss_base(target, recon, c.w, models.w_bar, weights, plugins);
      } else {
        EncodeOutput enc = models.encoder.encode(target);
        ad::Var w = models.encoder.predict(enc.latents, models.w_bar);
        ad::Var recon = models.generator.synthesize(w);
        terms = loss_base(target, recon, w, models.w_bar, weights, plugins);
      }
      const double total = terms.total.item();
      if (!std::isfinite(total)) throw TrainingError("non-finite loss at step " + std::to_string(step), step);
      ad::backward(ad::scale(terms.total, inv_batch));
      rec.l2 += terms.l2.item() * inv_batch;
      rec.perceptual += terms.perceptual.item() * inv_batch;
      rec.id += terms.id.item() * inv_batch;
      rec.align += terms.align.item() * inv_batch;
      rec.total += total * inv_batch;
    }
    opt.step();
    opt.zero_grad();
    result.trace.push_back(rec);
    if (on_step) on_step(rec);

    const auto w = static_cast<std::size_t>(stage.plateau_window);
    const std::size_t n = result.trace.size();
    if (n % w == 0 && n >= 2 * w) {
      const double prev = mean_total(result.trace, n - 2 * w, n - w);
      const double cur = mean_total(result.trace, n - w, n);
      if (prev - cur < stage.plateau_tolerance * prev) {
        result.early_stopped = true;
        break;
      }
    }
  }
  set_trainable(encoder_params, false);
  set_trainable(smart_params, false);
  return result;
}

std::string trace_csv(const std::vector<StepLoss>& trace) {
  std::ostringstream out;
  out.precision(10);
  out << "step,l2,perceptual,id,align,total\n";
  for (const auto& s : trace)
    out << s.step << ',' << s.l2 << ',' << s.perceptual << ',' << s.id << ',' << s.align << ',' << s.total << '\n';
  return out.str();
}

double smoothed_loss(const std::vector<StepLoss>& trace, long first, long count) {
  const long n = static_cast<long>(trace.size());
  if (count < 1 || n == 0) throw ArgumentError("smoothed_loss: empty window");
  long begin = first < 0 ? n + first : first;
  long end = std::min(n, begin + count);
  begin = std::max(0L, begin);
  if (begin >= end) throw ArgumentError("smoothed_loss: window outside the trace");
  return mean_total(trace, static_cast<std::size_t>(begin), static_cast<std::size_t>(end));
}

double evaluate_image_loss(const Models& models, const Dataset& data, const LossWeights& weights,
                           const LossPlugins& plugins, bool refined) {
  if (data.images.empty()) throw ArgumentError("evaluate_image_loss: dataset is empty");
  ad::NoGradGuard guard;
  double acc = 0.0;
  for (const auto& img : data.images) {
    InversionResult inv = invert(img, models);
    const Image& out = refined ? inv.image_refined : inv.image_baseline;
    acc += loss_image(image_to_var(img), image_to_var(out), weights, plugins).total.item();
  }
  return acc / static_cast<double>(data.images.size());
}

// --- gradient checks -----------------------------------------------------------

GradCheckResult gradient_check(const std::function<ad::Var()>& loss, const NamedParams& params, int samples,
                               double epsilon, std::uint64_t seed) {
  if (params.empty() || samples < 1 || !(epsilon > 0.0)) throw ArgumentError("gradient_check: bad arguments");
  for (const auto& [name, p] : params) {
    p.ptr()->requires_grad = true;
    const_cast<ad::Var&>(p).zero_grad();
  }
  ad::backward(loss());
  // Entries whose true gradient is zero still pick up roundoff in the
  // difference quotient, so the floor follows the gradient's overall scale.
  double scale = 1.0;
  for (const auto& [name, p] : params)
    for (double g : p.grad()) scale = std::max(scale, std::abs(g));
  const double floor = kGradCheckFloor * scale;

  Rng rng(seed);
  GradCheckResult res;
  for (int s = 0; s < samples; ++s) {
    std::uniform_int_distribution<std::size_t> pick_tensor(0, params.size() - 1);
    const auto& [name, p] = params[pick_tensor(rng)];
    std::uniform_int_distribution<std::size_t> pick_elem(0, p.size() - 1);
    const std::size_t j = pick_elem(rng);
    const double analytic = p.grad().empty() ? 0.0 : p.grad()[j];
    auto& val = p.ptr()->value;
    const double orig = val[j];
    double plus, minus;
    {
      ad::NoGradGuard guard;
      val[j] = orig + epsilon;
      plus = loss().item();
      val[j] = orig - epsilon;
      minus = loss().item();
      val[j] = orig;
    }
    const double numeric = (plus - minus) / (2.0 * epsilon);
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    const double rel = std::abs(analytic - numeric) / denom;
    ++res.checked;
    if (rel >= res.max_rel_error) {
      res.max_rel_error = rel;
      std::ostringstream w;
      w.precision(6);
      w << name << "[" << j << "] analytic " << analytic << " numeric " << numeric;
      res.worst = w.str();
    }
  }
  for (const auto& [name, p] : params) const_cast<ad::Var&>(p).zero_grad();
  return res;
}

namespace {

ad::Var random_constant(ad::Shape shape, Rng& rng, double scale = 1.0) {
  auto v = standard_normal(ad::numel(shape), rng);
  for (auto& x : v) x *= scale;
  return ad::constant(std::move(shape), std::move(v));
}

ad::Var probe(const ad::Var& out, const ad::Var& weights) { return ad::sum(ad::mul(out, weights)); }

void randomize(const NamedParams& params, Rng& rng, double scale) {
  for (const auto& [name, p] : params) {
    auto& v = p.ptr()->value;
    auto r = standard_normal(v.size(), rng);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = r[i] * scale;
  }
}

}  // namespace

GradCheckResult gradient_check(GradComponent component, const GradCheckOptions& o) {
  Rng rng(o.seed);
  switch (component) {
    case GradComponent::LINEAR_HEAD: {
      const int in = 16, out = 8;
      ad::Var x = random_constant({4, in}, rng);
      ad::Var w = ad::parameter({in, out}, standard_normal(in * out, rng));
      ad::Var b = ad::parameter({out}, standard_normal(out, rng));
      ad::Var r = random_constant({4, out}, rng);
      return gradient_check([&] { return probe(ad::linear(x, w, b), r); }, {{"w", w}, {"b", b}}, o.samples,
                            o.epsilon, o.seed);
    }
    case GradComponent::HEAD: {
      EncoderConfig cfg;
      cfg.base_channels = o.base_channels;
      cfg.image_size = o.image_size;
      cfg.head_hidden = 16;
      cfg.w_dim = 8;
      Encoder enc(cfg, o.seed);
      const int c = cfg.stage_channels(cfg.stages);
      LatentTokens lat{random_constant({cfg.latent_token_count, c}, rng)};
      AverageLatent w_bar{standard_normal(cfg.w_dim, rng)};
      ad::Var r = random_constant({cfg.latent_token_count, cfg.w_dim}, rng);
      return gradient_check([&] { return probe(predict_latents(lat, enc.head, w_bar), r); }, enc.head_parameters(),
                            o.samples, o.epsilon, o.seed);
    }
    case GradComponent::ENCODER: {
      EncoderConfig cfg;
      cfg.base_channels = o.base_channels;
      cfg.image_size = o.image_size;
      cfg.head_hidden = 16;
      cfg.w_dim = 8;
      Encoder enc(cfg, o.seed);
      ad::Var image = random_constant({3, cfg.image_size, cfg.image_size}, rng, 0.5);
      AverageLatent w_bar{standard_normal(cfg.w_dim, rng)};
      ad::Var r_w = random_constant({cfg.latent_token_count, cfg.w_dim}, rng);
      std::vector<ad::Var> r_p;
      for (int s = 1; s <= cfg.stages; ++s)
        r_p.push_back(random_constant({cfg.grid_side(s) * cfg.grid_side(s), cfg.stage_channels(s)}, rng));
      auto loss = [&] {
        EncodeOutput e = enc.encode(image);
        std::vector<ad::Var> terms{probe(enc.predict(e.latents, w_bar), r_w)};
        for (std::size_t s = 0; s < e.pyramid.maps.size(); ++s) terms.push_back(probe(e.pyramid.maps[s].tokens, r_p[s]));
        return ad::add_n(terms);
      };
      return gradient_check(loss, enc.named_parameters(), o.samples, o.epsilon, o.seed);
    }
    case GradComponent::GENERATOR: {
      GeneratorConfig cfg;
      cfg.output_size = o.generator_size;
      cfg.z_dim = 8;
      cfg.w_dim = 8;
      cfg.base_feature_channels = 8;
      cfg.mapping_depth = 2;
      Generator gen(cfg, o.seed);
      set_trainable(gen.named_parameters(), false);
      ad::Var wplus = ad::parameter({cfg.style_count(), cfg.w_dim},
                                    standard_normal(static_cast<std::size_t>(cfg.style_count()) * cfg.w_dim, rng));
      ad::Var target = random_constant({3, cfg.output_size, cfg.output_size}, rng, 0.5);
      return gradient_check([&] { return loss_l2(gen.synthesize(wplus), target); }, {{"wplus", wplus}}, o.samples,
                            o.epsilon, o.seed);
    }
    case GradComponent::SMART: {
      SmartConfig cfg;
      cfg.feature_channels = 8;
      cfg.feature_side = o.feature_side;
      cfg.pyramid_channels = {8, 16, 32};
      cfg.pyramid_sides = {2 * o.feature_side, o.feature_side, std::max(1, o.feature_side / 2)};
      cfg.attn_width = 8;
      cfg.heads = 2;
      cfg.ffn_hidden = 16;
      SmartParams params = init_smart_params(cfg, o.seed);
      randomize(params.named_parameters(), rng, 0.3);
      ad::Var f = ad::parameter({cfg.feature_channels, cfg.feature_side, cfg.feature_side},
                                standard_normal(static_cast<std::size_t>(cfg.feature_channels) * cfg.feature_side *
                                                    cfg.feature_side,
                                                rng));
      PyramidFeatures pyr;
      NamedParams all = params.named_parameters();
      all.emplace_back("feature", f);
      for (std::size_t s = 0; s < cfg.pyramid_sides.size(); ++s) {
        const int side = cfg.pyramid_sides[s];
        ad::Var t = ad::parameter({side * side, cfg.pyramid_channels[s]},
                                  standard_normal(static_cast<std::size_t>(side) * side * cfg.pyramid_channels[s], rng));
        pyr.maps.push_back({t, side});
        all.emplace_back("pyramid" + std::to_string(s + 1), t);
      }
      ad::Var r = random_constant({cfg.feature_channels, cfg.feature_side, cfg.feature_side}, rng);
      return gradient_check(
          [&] { return probe(smart_refine({f, cfg.layer}, pyr, {1.0, 1.0}, params).tensor, r); }, all, o.samples,
          o.epsilon, o.seed);
    }
  }
  throw ArgumentError("gradient_check: unknown component");
}

}  // namespace latinv
