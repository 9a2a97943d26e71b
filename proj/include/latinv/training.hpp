#pragma once

// Loss stack, pluggable perceptual/identity networks, the Ranger optimizer,
// the two-stage training loop, and finite-difference gradient checks.

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "latinv/autodiff.hpp"
#include "latinv/image.hpp"
#include "latinv/latent_spaces.hpp"
#include "latinv/models.hpp"
#include "latinv/nn.hpp"

namespace latinv {

struct LossWeights {
  double lambda1 = 1.0;  // pixel L2
  double lambda2 = 0.6;  // perceptual
  double lambda3 = 0.1;  // identity
  double lambda4 = 0.1;  // align

  void validate() const;
};

// --- plugins -------------------------------------------------------------------

/// Fixed network whose per-layer activations define a perceptual distance.
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  /// image [3, H, W] -> activations, one per layer
  virtual std::vector<ad::Var> features(const ad::Var& image) const = 0;
};

/// Identity embedder. Every returned vector has unit L2 norm.
class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::vector<ad::Var> embed_layers(const ad::Var& image) const = 0;
  /// Final-layer embedding.
  std::vector<double> embed(const Image& image) const;
};

/// Fixed-seed random conv stack: 3x3 conv + leaky ReLU per layer, 2x average
/// pooling between layers.
class RandomConvExtractor : public FeatureExtractor {
 public:
  explicit RandomConvExtractor(std::uint64_t seed, std::vector<int> widths = {8, 16, 16});
  std::vector<ad::Var> features(const ad::Var& image) const override;

 private:
  std::vector<ad::Var> weights_;
  std::vector<ad::Var> biases_;
};

/// Random conv stack whose layer activations are pooled to 4x4 and
/// unit-normalized.
class RandomConvEmbedder : public Embedder {
 public:
  explicit RandomConvEmbedder(std::uint64_t seed, std::vector<int> widths = {8, 16, 16});
  std::vector<ad::Var> embed_layers(const ad::Var& image) const override;

 private:
  RandomConvExtractor net_;
};

using ExtractorFactory = std::function<std::shared_ptr<const FeatureExtractor>(std::uint64_t seed)>;
using EmbedderFactory = std::function<std::shared_ptr<const Embedder>(std::uint64_t seed)>;

/// "random-conv" is registered for both kinds.
void register_feature_extractor(const std::string& name, ExtractorFactory factory);
void register_embedder(const std::string& name, EmbedderFactory factory);
std::shared_ptr<const FeatureExtractor> make_feature_extractor(const std::string& name, std::uint64_t seed);
std::shared_ptr<const Embedder> make_embedder(const std::string& name, std::uint64_t seed);

struct LossPlugins {
  std::shared_ptr<const FeatureExtractor> perceptual;
  std::shared_ptr<const Embedder> identity;

  static LossPlugins defaults(std::uint64_t seed = 7);
};

// --- losses --------------------------------------------------------------------

struct LossTerms {
  ad::Var l2, perceptual, id, align, total;
};

ad::Var loss_l2(const ad::Var& image, const ad::Var& inverted);
/// Mean over layers of the mean squared activation difference.
ad::Var loss_perceptual(const ad::Var& image, const ad::Var& inverted, const FeatureExtractor* metric);
/// Mean over embedder layers of 1 - cos.
ad::Var loss_id(const ad::Var& image, const ad::Var& inverted, const Embedder* embedder);
LossTerms loss_image(const ad::Var& image, const ad::Var& inverted, const LossWeights& weights,
                     const LossPlugins& plugins);
/// Mean over layers of || w_inv[l] - w_bar ||_2. w_inv is [L, d].
ad::Var loss_align(const ad::Var& w_inv, const AverageLatent& w_bar);
LossTerms loss_base(const ad::Var& image, const ad::Var& inverted, const ad::Var& w_inv, const AverageLatent& w_bar,
                    const LossWeights& weights, const LossPlugins& plugins);

// --- optimizer -----------------------------------------------------------------

struct RangerOptions {
  double lr = 1e-3;
  double beta1 = 0.95;
  double beta2 = 0.999;
  double eps = 1e-5;
  int lookahead_k = 6;
  double lookahead_alpha = 0.5;
  double rectify_threshold = 5.0;
};

/// Rectified Adam with Lookahead over the given leaves.
class Ranger {
 public:
  Ranger(std::vector<ad::Var> params, RangerOptions options = {});
  void step();
  void zero_grad();
  long steps() const { return t_; }

 private:
  std::vector<ad::Var> params_;
  RangerOptions opt_;
  std::vector<std::vector<double>> m_, v_, slow_;
  long t_ = 0;
};

// --- training ------------------------------------------------------------------

struct Dataset {
  std::vector<Image> images;
  std::vector<LatentCode> latents;  // ground-truth codes when known
};

/// Images synthesized from broadcast codes of standard-normal z draws.
Dataset make_self_inversion_dataset(const Generator& generator, int count, std::uint64_t seed);

struct TrainingStage {
  enum class Kind { BASELINE, SMART };
  Kind kind = Kind::BASELINE;
  long steps = 2000;
  double learning_rate = 1e-3;
  int batch_size = 4;
  int plateau_window = 200;
  double plateau_tolerance = 1e-3;
};

TrainingStage::Kind stage_kind_from_string(const std::string& name);

struct StepLoss {
  long step = 0;
  double l2 = 0, perceptual = 0, id = 0, align = 0, total = 0;
};

struct TrainResult {
  std::vector<StepLoss> trace;
  bool early_stopped = false;
};

using TrainCallback = std::function<void(const StepLoss&)>;

/// Mutates only the stage's trainable set: encoder and head for BASELINE,
/// SMART parameters for SMART. The SMART stage forces lambda4 to 0.
TrainResult train(const TrainingStage& stage, const Dataset& data, Models& models, LossWeights weights,
                  const LossPlugins& plugins, std::uint64_t seed, const TrainCallback& on_step = {});

std::string trace_csv(const std::vector<StepLoss>& trace);
/// Mean total loss over `count` steps starting at `first` (negative counts
/// from the end).
double smoothed_loss(const std::vector<StepLoss>& trace, long first, long count);

/// Mean L_image over a dataset, from the baseline or SMART-refined images.
double evaluate_image_loss(const Models& models, const Dataset& data, const LossWeights& weights,
                           const LossPlugins& plugins, bool refined);

// --- gradient checks -----------------------------------------------------------

struct GradCheckResult {
  double max_rel_error = 0.0;
  int checked = 0;
  std::string worst;
};

/// Floor on the denominator of the relative error, as a fraction of the
/// largest analytic gradient magnitude (at least 1).
inline constexpr double kGradCheckFloor = 1e-6;

/// Central differences on `samples` entries drawn from `params` (tensor first,
/// then element) against one analytic backward pass of `loss`.
GradCheckResult gradient_check(const std::function<ad::Var()>& loss, const NamedParams& params, int samples,
                               double epsilon, std::uint64_t seed);

enum class GradComponent { LINEAR_HEAD, HEAD, ENCODER, GENERATOR, SMART };

struct GradCheckOptions {
  int image_size = 32;
  int base_channels = 8;
  int generator_size = 16;
  int feature_side = 4;
  int samples = 20;
  double epsilon = 1e-5;
  std::uint64_t seed = 1;
};

GradCheckResult gradient_check(GradComponent component, const GradCheckOptions& options);

}  // namespace latinv
