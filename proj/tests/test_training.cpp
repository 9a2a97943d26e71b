#include <doctest.h>

#include <cmath>

#include "latinv/errors.hpp"
#include "latinv/training.hpp"
#include "support.hpp"

using namespace latinv;
using ad::Var;

namespace {

std::vector<std::vector<double>> values_of(const NamedParams& params) {
  std::vector<std::vector<double>> out;
  for (const auto& [name, v] : params) out.push_back(v.value());
  return out;
}

struct IdentityExtractor : FeatureExtractor {
  std::vector<Var> features(const Var& image) const override { return {image}; }
};

}  // namespace

TEST_CASE("pixel loss is the mean squared error") {
  const Var a = ad::constant({1, 1, 2}, {0.0, 1.0});
  const Var b = ad::constant({1, 1, 2}, {1.0, 3.0});
  CHECK(loss_l2(a, b).item() == doctest::Approx(2.5));
  CHECK(loss_l2(a, a).item() == 0.0);
  CHECK_THROWS_AS(loss_l2(a, ad::zeros({1, 2, 1})), DimensionError);
}

TEST_CASE("perceptual loss averages per-layer squared differences") {
  IdentityExtractor ident;
  const Var a = ad::constant({1, 1, 2}, {0.0, 1.0});
  const Var b = ad::constant({1, 1, 2}, {1.0, 3.0});
  CHECK(loss_perceptual(a, b, &ident).item() == doctest::Approx(2.5));
  CHECK_THROWS_AS(loss_perceptual(a, b, nullptr), ConfigError);
}

TEST_CASE("identity loss is zero for equal images and bounded by two") {
  const auto plugins = LossPlugins::defaults();
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 5; ++trial) {
    const Var a = testing::random_const({3, 16, 16}, rng);
    const Var b = testing::random_const({3, 16, 16}, rng);
    CHECK(std::abs(loss_id(a, a, plugins.identity.get()).item()) < 1e-12);
    const double d = loss_id(a, b, plugins.identity.get()).item();
    CHECK(d >= 0.0);
    CHECK(d <= 2.0);
  }
}

TEST_CASE("embeddings have unit norm") {
  const auto plugins = LossPlugins::defaults();
  std::mt19937_64 rng(2);
  const Image img{3, 16, 16, testing::randn(3 * 16 * 16, rng)};
  const auto e = plugins.identity->embed(img);
  double n = 0;
  for (double v : e) n += v * v;
  CHECK(std::sqrt(n) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("align loss averages per-layer distances to the average latent") {
  const Var w = ad::constant({2, 2}, {3.0, 4.0, 0.0, 1.0});
  const AverageLatent bar{{0.0, 1.0}};
  // Rows minus bar: (3, 3) and (0, 0).
  CHECK(loss_align(w, bar).item() == doctest::Approx(3.0 * std::sqrt(2.0) / 2.0).epsilon(1e-14));
  CHECK_THROWS_AS(loss_align(ad::zeros({2, 3}), bar), DimensionError);
}

TEST_CASE("total loss is the weighted sum of its terms") {
  const auto plugins = LossPlugins::defaults();
  std::mt19937_64 rng(3);
  const Var a = testing::random_const({3, 16, 16}, rng);
  const Var b = testing::random_const({3, 16, 16}, rng);
  const Var w = testing::random_const({4, 3}, rng);
  const AverageLatent bar{{0.1, 0.2, 0.3}};
  const LossWeights lw{1.0, 0.6, 0.1, 0.1};
  const auto t = loss_base(a, b, w, bar, lw, plugins);
  const double expect = t.l2.item() + 0.6 * t.perceptual.item() + 0.1 * t.id.item() + 0.1 * t.align.item();
  CHECK(t.total.item() == doctest::Approx(expect).epsilon(1e-13));
  LossWeights bad;
  bad.lambda2 = -1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("Ranger leaves parameters in place until rectification starts") {
  Var p = ad::parameter({2}, {1.0, -1.0});
  RangerOptions o;
  o.lookahead_k = 100;
  Ranger opt({p}, o);
  long first_move = 0;
  for (int t = 1; t <= 10 && first_move == 0; ++t) {
    opt.zero_grad();
    ad::backward(ad::sum(ad::square(p)));
    const auto before = p.value();
    opt.step();
    if (p.value() != before) first_move = t;
  }
  // The variance rectification term first exceeds its threshold at step 6.
  CHECK(first_move == 6);
}

TEST_CASE("lookahead interpolates toward the slow weights") {
  auto run = [](double alpha) {
    Var p = ad::parameter({1}, {1.0});
    RangerOptions o;
    o.lookahead_k = 1;
    o.lookahead_alpha = alpha;
    Ranger opt({p}, o);
    for (int t = 0; t < 6; ++t) {
      opt.zero_grad();
      p.ptr()->grad = {1.0};
      opt.step();
    }
    return p.value()[0];
  };
  const double fast = run(1.0);
  const double half = run(0.5);
  REQUIRE(fast < 1.0);
  CHECK(half == doctest::Approx(1.0 + 0.5 * (fast - 1.0)).epsilon(1e-14));
  CHECK_THROWS_AS(Ranger({}, RangerOptions{0.0}), ConfigError);
}

TEST_CASE("Ranger minimizes a quadratic") {
  Var p = ad::parameter({3}, {2.0, -3.0, 1.0});
  RangerOptions o;
  o.lr = 0.05;
  Ranger opt({p}, o);
  for (int t = 0; t < 3000; ++t) {
    opt.zero_grad();
    ad::backward(ad::sum(ad::square(p)));
    opt.step();
  }
  CHECK(testing::max_abs(p.value()) < 0.05);
}

TEST_CASE("plugin registry builds registered networks by name") {
  CHECK(make_feature_extractor("random-conv", 1) != nullptr);
  CHECK(make_embedder("random-conv", 1) != nullptr);
  CHECK_THROWS_AS(make_feature_extractor("nope", 1), ConfigError);
  register_feature_extractor("identity-test", [](std::uint64_t) { return std::make_shared<IdentityExtractor>(); });
  const auto f = make_feature_extractor("identity-test", 0);
  const Var a = ad::constant({1, 1, 1}, {2.0});
  CHECK(f->features(a)[0].value() == a.value());
}

TEST_CASE("smoothed loss averages windows from either end") {
  std::vector<StepLoss> trace;
  for (int i = 1; i <= 10; ++i) trace.push_back({i, 0, 0, 0, 0, static_cast<double>(i)});
  CHECK(smoothed_loss(trace, 0, 4) == doctest::Approx(2.5));
  CHECK(smoothed_loss(trace, -4, 4) == doctest::Approx(8.5));
  CHECK(smoothed_loss(trace, 8, 16) == doctest::Approx(9.5));
  CHECK_THROWS_AS(smoothed_loss(trace, 0, 0), ArgumentError);
  CHECK_THROWS_AS(smoothed_loss({}, 0, 4), ArgumentError);
  const auto csv = trace_csv({trace[0]});
  CHECK(csv == "step,l2,perceptual,id,align,total\n1,0,0,0,0,1\n");
}

TEST_CASE("self-inversion datasets are reproducible and lie in W") {
  const auto models = make_models(testing::tiny_model_config());
  const auto a = make_self_inversion_dataset(models.generator, 3, 11);
  const auto b = make_self_inversion_dataset(models.generator, 3, 11);
  REQUIRE(a.images.size() == 3);
  for (int i = 0; i < 3; ++i) {
    CHECK(a.images[i].data == b.images[i].data);
    CHECK(a.latents[i].lies_in_w());
    CHECK(a.images[i].height == 16);
  }
  CHECK_THROWS_AS(make_self_inversion_dataset(models.generator, 0, 1), ArgumentError);
  CHECK(stage_kind_from_string("smart") == TrainingStage::Kind::SMART);
  CHECK_THROWS_AS(stage_kind_from_string("both"), ArgumentError);
}

TEST_CASE("the baseline stage touches only the encoder and head") {
  auto models = make_models(testing::tiny_model_config());
  const auto data = make_self_inversion_dataset(models.generator, 4, 1);
  const auto gen0 = values_of(models.generator.named_parameters());
  const auto smart0 = values_of(models.smart.named_parameters());
  const auto enc0 = values_of(models.encoder.named_parameters());
  TrainingStage st;
  st.steps = 8;
  st.batch_size = 2;
  const auto r = train(st, data, models, {}, LossPlugins::defaults(), 3);
  CHECK(r.trace.size() == 8);
  CHECK(values_of(models.generator.named_parameters()) == gen0);
  CHECK(values_of(models.smart.named_parameters()) == smart0);
  CHECK(values_of(models.encoder.named_parameters()) != enc0);
  for (const auto& [name, v] : models.named_parameters()) CHECK_FALSE(v.requires_grad());
}

TEST_CASE("the SMART stage touches only SMART and ignores the align weight") {
  auto models = make_models(testing::tiny_model_config());
  const auto data = make_self_inversion_dataset(models.generator, 4, 2);
  const auto gen0 = values_of(models.generator.named_parameters());
  const auto enc0 = values_of(models.encoder.named_parameters());
  const auto smart0 = values_of(models.smart.named_parameters());
  TrainingStage st;
  st.kind = TrainingStage::Kind::SMART;
  st.steps = 8;
  st.batch_size = 2;
  st.learning_rate = 1e-2;
  LossWeights lw;
  lw.lambda4 = 5.0;
  const auto r = train(st, data, models, lw, LossPlugins::defaults(), 4);
  CHECK(values_of(models.generator.named_parameters()) == gen0);
  CHECK(values_of(models.encoder.named_parameters()) == enc0);
  CHECK(values_of(models.smart.named_parameters()) != smart0);
  // With lambda4 forced to 0 the total is the image loss alone.
  const auto& s = r.trace.front();
  CHECK(s.total == doctest::Approx(s.l2 + 0.6 * s.perceptual + 0.1 * s.id).epsilon(1e-12));
}

TEST_CASE("short baseline training lowers the loss and is deterministic") {
  auto run = [] {
    auto models = make_models(testing::tiny_model_config());
    const auto data = make_self_inversion_dataset(models.generator, 8, 5);
    TrainingStage st;
    st.steps = 120;
    st.batch_size = 2;
    st.learning_rate = 3e-3;
    return train(st, data, models, {}, LossPlugins::defaults(), 6);
  };
  const auto a = run();
  CHECK(smoothed_loss(a.trace, -16, 16) < smoothed_loss(a.trace, 0, 16));
  const auto b = run();
  REQUIRE(a.trace.size() == b.trace.size());
  CHECK(a.trace.back().total == b.trace.back().total);
}

TEST_CASE("plateau detection stops a flat run") {
  auto models = make_models(testing::tiny_model_config());
  const auto data = make_self_inversion_dataset(models.generator, 2, 7);
  TrainingStage st;
  st.kind = TrainingStage::Kind::SMART;
  st.steps = 100;
  st.batch_size = 1;
  st.plateau_window = 2;
  st.plateau_tolerance = 10.0;
  const auto r = train(st, data, models, {}, LossPlugins::defaults(), 8);
  CHECK(r.early_stopped);
  CHECK(r.trace.size() == 4);
  st.batch_size = 0;
  CHECK_THROWS_AS(train(st, data, models, {}, LossPlugins::defaults(), 8), ConfigError);
}

TEST_CASE("generator gradients match finite differences") {
  GradCheckOptions o;
  const auto r = gradient_check(GradComponent::GENERATOR, o);
  CHECK(r.checked == o.samples);
  CHECK(r.max_rel_error <= 1e-4);
}

TEST_CASE("the generic gradient check flags a wrong gradient") {
  Var p = ad::parameter({3}, {1.0, 2.0, 3.0});
  const auto good = gradient_check([&] { return ad::sum(ad::square(p)); }, {{"p", p}}, 3, 1e-6, 1);
  CHECK(good.max_rel_error < 1e-6);
  // A loss whose value ignores its recorded graph reports a large error.
  const auto bad = gradient_check([&] { return ad::add(ad::sum(p), ad::constant({1}, {ad::sum(ad::square(p)).item()})); },
                                  {{"p", p}}, 3, 1e-6, 1);
  CHECK(bad.max_rel_error > 0.1);
}
