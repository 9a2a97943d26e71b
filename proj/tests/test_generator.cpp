#include <doctest.h>

#include <cmath>

#include "latinv/errors.hpp"
#include "latinv/generator.hpp"
#include "latinv/image.hpp"
#include "latinv/training.hpp"
#include "support.hpp"

using namespace latinv;
using ad::Var;

namespace {

GeneratorConfig small_config(int size = 16) {
  GeneratorConfig cfg;
  cfg.output_size = size;
  cfg.z_dim = 6;
  cfg.w_dim = 6;
  cfg.base_feature_channels = 8;
  cfg.mapping_depth = 3;
  return cfg;
}

Var random_wplus(const Generator& g, std::mt19937_64& rng) {
  const int L = g.config().style_count();
  return testing::random_const({L, g.config().w_dim}, rng, 0.5);
}

}  // namespace

TEST_CASE("style count and layer schedule follow the group layout") {
  GeneratorConfig cfg;
  CHECK(cfg.style_count() == 8);
  CHECK(cfg.conv_layer_count() == 7);
  const int expected_res[] = {4, 8, 8, 16, 16, 32, 32};
  for (int l = 1; l <= 7; ++l) CHECK(cfg.layer_resolution(l) == expected_res[l - 1]);
  CHECK(small_config(16).style_count() == 6);
  GeneratorConfig big;
  big.output_size = 1024;
  CHECK(big.style_count() == 18);
  GeneratorConfig bad;
  bad.output_size = 4;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad.output_size = 24;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("mapping is deterministic, sized, and checks its input") {
  Generator g(small_config(), 1);
  const std::vector<double> z{0.1, -0.2, 0.3, 0.5, -1.0, 2.0};
  const auto w1 = g.map_z_to_w(z);
  CHECK(w1.size() == 6);
  CHECK(w1 == g.map_z_to_w(z));
  const std::vector<double> short_z{1.0};
  CHECK_THROWS_AS(g.map_z_to_w(short_z), DimensionError);
}

TEST_CASE("two-layer mapping matches a hand-evaluated forward pass") {
  auto cfg = small_config();
  cfg.z_dim = 2;
  cfg.w_dim = 2;
  cfg.mapping_depth = 2;
  Generator g(cfg, 1);
  // Hidden layer: zero weights, bias (1, -2). Output layer: W = [[1, 2], [3, 4]], b = (0.5, 0).
  g.mapping[0].weight.mutable_value().assign(4, 0.0);
  g.mapping[0].bias.mutable_value() = {1.0, -2.0};
  g.mapping[1].weight.mutable_value() = {1.0, 2.0, 3.0, 4.0};
  g.mapping[1].bias.mutable_value() = {0.5, 0.0};
  const double s2 = std::sqrt(2.0);
  const double h0 = 1.0 * s2, h1 = -2.0 * 0.2 * s2;
  const std::vector<double> z{0.7, -0.3};
  const auto w = g.map_z_to_w(z);
  CHECK(w[0] == doctest::Approx(h0 * 1.0 + h1 * 3.0 + 0.5).epsilon(1e-14));
  CHECK(w[1] == doctest::Approx(h0 * 2.0 + h1 * 4.0).epsilon(1e-14));
}

TEST_CASE("affine style is affine with layer-specific width") {
  Generator g(small_config(), 2);
  std::mt19937_64 rng(3);
  const auto w = testing::randn(6, rng);
  std::vector<double> w2(w);
  for (auto& v : w2) v *= 2.0;
  for (int l = 1; l <= g.config().conv_layer_count(); ++l) {
    const auto s1 = g.affine_style(w, l).values;
    const auto s2 = g.affine_style(w2, l).values;
    const auto s0 = g.affine_style(std::vector<double>(6, 0.0), l).values;
    REQUIRE(s1.size() == static_cast<std::size_t>(g.convs[l - 1].weight.dim(1)));
    for (std::size_t i = 0; i < s1.size(); ++i) CHECK(s2[i] - s1[i] == doctest::Approx(s1[i] - s0[i]).epsilon(1e-12));
  }
  auto& aff = g.convs[0].affine;
  aff.weight.mutable_value().assign(aff.weight.size(), 0.0);
  aff.bias.mutable_value().assign(aff.bias.size(), 1.0);
  for (double s : g.affine_style(w, 1).values) CHECK(s == 1.0);
  CHECK_THROWS_AS(g.affine_style(w, 0), ArgumentError);
  CHECK_THROWS_AS(g.affine_style(w, g.config().conv_layer_count() + 1), ArgumentError);
}

TEST_CASE("synthesis has the output shape, is deterministic, and checks rows") {
  Generator g(small_config(), 4);
  std::mt19937_64 rng(5);
  Var w = random_wplus(g, rng);
  const Var a = g.synthesize(w);
  CHECK(a.shape() == ad::Shape{3, 16, 16});
  CHECK(a.value() == g.synthesize(w).value());
  CHECK_THROWS_AS(g.synthesize(testing::random_const({5, 6}, rng)), DimensionError);
  const auto code = g.broadcast_w(testing::randn(6, rng));
  CHECK(code.layers() == 6);
  CHECK(code.lies_in_w());
}

TEST_CASE("split and resume reproduces synthesis at every layer") {
  Generator g(small_config(), 6);
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 5; ++trial) {
    Var w = random_wplus(g, rng);
    const auto full = g.synthesize(w).value();
    for (int l = 1; l <= g.config().conv_layer_count(); ++l) {
      auto [feat, partial] = g.synthesize_to_layer(w, l);
      CHECK(feat.layer == l);
      CHECK(feat.tensor.dim(1) == g.config().layer_resolution(l));
      CHECK(feat.tensor.dim(0) == g.config().layer_channels(l));
      CHECK(testing::max_abs_diff(g.synthesize_from_layer(feat, partial, w, l).value(), full) <= 1e-6);
    }
  }
  Var w = random_wplus(g, rng);
  CHECK_THROWS_AS(g.synthesize_to_layer(w, 0), ArgumentError);
  CHECK_THROWS_AS(g.synthesize_to_layer(w, g.config().conv_layer_count() + 1), ArgumentError);
}

TEST_CASE("resuming from perturbed features changes the image") {
  Generator g(small_config(), 8);
  std::mt19937_64 rng(9);
  Var w = random_wplus(g, rng);
  auto [feat, partial] = g.synthesize_to_layer(w, 3);
  const auto base = g.synthesize_from_layer(feat, partial, w, 3).value();
  FeatureMap moved{ad::add(feat.tensor, testing::random_const(feat.tensor.shape(), rng, 1e-2)), 3};
  CHECK(testing::max_abs_diff(g.synthesize_from_layer(moved, partial, w, 3).value(), base) > 0.0);
  FeatureMap wrong{testing::random_const({1, 2, 2}, rng), 3};
  CHECK_THROWS_AS(g.synthesize_from_layer(wrong, partial, w, 3), DimensionError);
}

TEST_CASE("changing row l leaves everything up to layer l-1 untouched") {
  Generator g(small_config(), 10);
  std::mt19937_64 rng(11);
  const Var w = random_wplus(g, rng);
  const int d = g.config().w_dim;
  for (int l = 2; l <= g.config().conv_layer_count(); ++l) {
    std::vector<double> changed = w.value();
    for (int c = 0; c < d; ++c) changed[(l - 1) * d + c] += 1.0;
    const Var w2 = ad::constant(w.shape(), changed);
    auto [f1, p1] = g.synthesize_to_layer(w, l - 1);
    auto [f2, p2] = g.synthesize_to_layer(w2, l - 1);
    CHECK(f1.tensor.value() == f2.tensor.value());
    if (p1) CHECK(p1.value() == p2.value());
  }
}

TEST_CASE("zeroed later ToRGBs freeze the image at the partial canvas") {
  Generator g(small_config(), 12);
  std::mt19937_64 rng(13);
  const Var w = random_wplus(g, rng);
  for (std::size_t t = 1; t < g.torgbs.size(); ++t) {
    g.torgbs[t].weight.mutable_value().assign(g.torgbs[t].weight.size(), 0.0);
    g.torgbs[t].bias.mutable_value().assign(g.torgbs[t].bias.size(), 0.0);
  }
  // Layer 2 starts the second group, so its canvas holds only group 0.
  auto [feat, canvas] = g.synthesize_to_layer(w, 2);
  REQUIRE(canvas);
  Var up = canvas;
  while (up.dim(1) < g.config().output_size) up = ad::upsample_bilinear2x(up);
  CHECK(testing::max_abs_diff(g.synthesize(w).value(), up.value()) < 1e-12);
}

TEST_CASE("image gradients with respect to w+ match finite differences") {
  Generator g(small_config(), 14);
  std::mt19937_64 rng(15);
  Var w = ad::parameter({6, 6}, testing::randn(36, rng, 0.5));
  const Var target = testing::random_const({3, 16, 16}, rng, 0.5);
  auto loss = [&] { return ad::mean(ad::square(ad::sub(g.synthesize(w), target))); };
  const auto r = gradient_check(loss, {{"wplus", w}}, 30, 1e-6, 1);
  CHECK(r.max_rel_error <= 1e-4);
}

TEST_CASE("average latent is reproducible and equals the single sample at n = 1") {
  Generator g(small_config(), 16);
  const auto a = g.average_latent(50, 3).value;
  CHECK(a == g.average_latent(50, 3).value);
  Rng rng(9);
  const auto z = standard_normal(6, rng);
  CHECK(g.average_latent(1, 9).value == g.map_z_to_w(z));
  CHECK_THROWS_AS(g.average_latent(0, 1), ArgumentError);
}

TEST_CASE("average of an identity mapping shrinks toward zero") {
  auto cfg = small_config();
  cfg.mapping_depth = 1;
  Generator g(cfg, 17);
  auto& m = g.mapping[0];
  m.weight.mutable_value().assign(36, 0.0);
  for (int i = 0; i < 6; ++i) m.weight.mutable_value()[i * 6 + i] = 1.0;
  m.bias.mutable_value().assign(6, 0.0);
  for (int n : {16, 256, 4096}) {
    const auto wbar = g.average_latent(n, 100 + n).value;
    double norm = 0;
    for (double v : wbar) norm += v * v;
    CHECK(std::sqrt(norm) <= 3.0 * std::sqrt(6.0) / std::sqrt(static_cast<double>(n)));
  }
}

TEST_CASE("PNG encoding rounds half away from zero and round-trips 8-bit values") {
  Image img{3, 1, 2, {-1.0, 0.0, 1.0, 2.0, -3.0, 0.5}};
  const auto dec = decode_png(encode_png(img));
  REQUIRE(dec.data.size() == 6);
  const double expect[] = {0, 128, 255, 255, 0, std::round(1.5 * 127.5)};
  for (int i = 0; i < 6; ++i) CHECK(dec.data[i] == doctest::Approx(expect[i] / 127.5 - 1.0).epsilon(1e-15));
  CHECK(encode_png(dec) == encode_png(decode_png(encode_png(dec))));
  CHECK(png_dimensions(encode_png(img)) == std::pair<int, int>{1, 2});
  CHECK_THROWS_AS(decode_png({1, 2, 3}), ArgumentError);
}

TEST_CASE("base64 round-trips arbitrary bytes") {
  for (std::size_t n : {0u, 1u, 2u, 3u, 4u, 100u}) {
    std::vector<std::uint8_t> b(n);
    for (std::size_t i = 0; i < n; ++i) b[i] = static_cast<std::uint8_t>(i * 37 + 11);
    CHECK(base64_decode(base64_encode(b)) == b);
  }
  CHECK(base64_encode({'M', 'a'}) == "TWE=");
  CHECK_THROWS_AS(base64_decode("abc"), ArgumentError);
}
