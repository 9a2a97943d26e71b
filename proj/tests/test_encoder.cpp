#include <doctest.h>

#include <cmath>

#include "latinv/encoder.hpp"
#include "latinv/errors.hpp"
#include "latinv/training.hpp"
#include "support.hpp"

using namespace latinv;
using ad::Var;

namespace {

EncoderConfig small_encoder(int T = 4) {
  EncoderConfig cfg;
  cfg.image_size = 16;
  cfg.patch_size = 2;
  cfg.window_size = 4;
  cfg.stages = 3;
  cfg.stage_depths = {2, 2, 2};
  cfg.heads_per_stage = {1, 2, 2};
  cfg.base_channels = 8;
  cfg.latent_token_count = T;
  cfg.w_dim = 6;
  cfg.head_hidden = 12;
  return cfg;
}

AttentionParams random_attention(int c, int heads, int m, std::mt19937_64& rng) {
  AttentionParams p;
  p.heads = heads;
  p.window = m;
  p.qkv_weight = testing::random_const({c, 3 * c}, rng, 0.5);
  p.qkv_bias = testing::random_const({3 * c}, rng, 0.1);
  p.proj_weight = testing::random_const({c, c}, rng, 0.5);
  p.proj_bias = testing::random_const({c}, rng, 0.1);
  p.rel_bias = testing::random_const({(2 * m - 1) * (2 * m - 1), heads}, rng, 0.5);
  return p;
}

// Multi-head softmax attention over one window by loops. Rows [0, m*m) are
// patches laid out row-major in the window; the rest carry no position.
std::vector<double> oracle_window_attention(const Var& win, const AttentionParams& p) {
  const int n = win.dim(0), c = win.dim(1), m = p.window, heads = p.heads, dh = c / heads;
  const auto& x = win.value();
  const auto& W = p.qkv_weight.value();
  std::vector<double> qkv(static_cast<std::size_t>(n) * 3 * c);
  for (int r = 0; r < n; ++r)
    for (int o = 0; o < 3 * c; ++o) {
      double s = p.qkv_bias.value()[o];
      for (int i = 0; i < c; ++i) s += x[r * c + i] * W[i * 3 * c + o];
      qkv[r * 3 * c + o] = s;
    }
  std::vector<double> merged(static_cast<std::size_t>(n) * c, 0.0);
  for (int h = 0; h < heads; ++h)
    for (int a = 0; a < n; ++a) {
      std::vector<double> score(n);
      for (int b = 0; b < n; ++b) {
        double s = 0;
        for (int e = 0; e < dh; ++e) s += qkv[a * 3 * c + h * dh + e] * qkv[b * 3 * c + c + h * dh + e];
        s /= std::sqrt(static_cast<double>(dh));
        if (a < m * m && b < m * m) {
          const int ry = a / m - b / m, rx = a % m - b % m;
          s += p.rel_bias.value()[((ry + m - 1) * (2 * m - 1) + (rx + m - 1)) * heads + h];
        }
        score[b] = s;
      }
      double mx = -INFINITY, z = 0;
      for (double s : score) mx = std::max(mx, s);
      for (double& s : score) z += (s = std::exp(s - mx));
      for (int b = 0; b < n; ++b)
        for (int e = 0; e < dh; ++e) merged[a * c + h * dh + e] += score[b] / z * qkv[b * 3 * c + 2 * c + h * dh + e];
    }
  std::vector<double> out(static_cast<std::size_t>(n) * c);
  for (int r = 0; r < n; ++r)
    for (int o = 0; o < c; ++o) {
      double s = p.proj_bias.value()[o];
      for (int i = 0; i < c; ++i) s += merged[r * c + i] * p.proj_weight.value()[i * c + o];
      out[r * c + o] = s;
    }
  return out;
}

}  // namespace

TEST_CASE("window partition follows row-major window and slot order") {
  std::mt19937_64 rng(1);
  PatchTokens x{testing::random_const({16, 3}, rng), 4, 4};
  const auto one = window_partition(x, 4);
  REQUIRE(one.size() == 1);
  CHECK(one[0].value() == x.tensor.value());

  const auto four = window_partition(x, 2);
  REQUIRE(four.size() == 4);
  for (int r = 0; r < 4; ++r)
    for (int col = 0; col < 4; ++col) {
      const int win = (r / 2) * 2 + col / 2, slot = (r % 2) * 2 + col % 2;
      for (int ch = 0; ch < 3; ++ch) CHECK(four[win].value()[slot * 3 + ch] == x.tensor.value()[(r * 4 + col) * 3 + ch]);
    }
  // Token (row 0, col 2) is window 1, slot 0.
  CHECK(four[1].value()[0] == x.tensor.value()[2 * 3]);
  CHECK(window_reverse(four, 2, 4, 4).tensor.value() == x.tensor.value());
  PatchTokens odd{testing::random_const({36, 3}, rng), 6, 6};
  CHECK_THROWS_AS(window_partition(odd, 4), ConfigError);
}

TEST_CASE("latent tokens are appended identically to every window") {
  std::mt19937_64 rng(2);
  PatchTokens x{testing::random_const({16, 4}, rng), 4, 4};
  LatentTokens lat{testing::random_const({2, 4}, rng)};
  const auto aug = attach_latent_tokens(window_partition(x, 2), lat);
  REQUIRE(aug.size() == 4);
  for (const auto& w : aug) {
    CHECK(w.dim(0) == 6);
    CHECK(std::vector<double>(w.value().end() - 8, w.value().end()) == lat.tensor.value());
  }
  LatentTokens wrong{testing::random_const({2, 5}, rng)};
  CHECK_THROWS_AS(attach_latent_tokens(window_partition(x, 2), wrong), DimensionError);
}

TEST_CASE("windowed attention matches a per-window loop oracle") {
  std::mt19937_64 rng(3);
  for (int heads : {1, 2}) {
    const int m = 2, c = 4, T = 3;
    auto p = random_attention(c, heads, m, rng);
    std::vector<Var> wins;
    for (int w = 0; w < 3; ++w) wins.push_back(testing::random_const({m * m + T, c}, rng));
    const auto out = windowed_self_attention(wins, p);
    REQUIRE(out.patches.size() == 3);
    REQUIRE(out.latents.size() == 3);
    for (int w = 0; w < 3; ++w) {
      const auto ref = oracle_window_attention(wins[w], p);
      std::vector<double> got = out.patches[w].value();
      got.insert(got.end(), out.latents[w].value().begin(), out.latents[w].value().end());
      CHECK(testing::max_abs_diff(got, ref) < 1e-12);
    }
  }
}

TEST_CASE("attention weights are row-stochastic") {
  std::mt19937_64 rng(4);
  auto p = random_attention(4, 2, 2, rng);
  std::vector<Var> wins{testing::random_const({6, 4}, rng), testing::random_const({6, 4}, rng)};
  const auto out = windowed_self_attention(wins, p, 0, 0, 0, true);
  for (const auto& per_head : out.weights)
    for (const auto& w : per_head)
      for (int r = 0; r < w.dim(0); ++r) {
        double s = 0;
        for (int col = 0; col < w.dim(1); ++col) s += w.value()[r * w.dim(1) + col];
        CHECK(std::abs(s - 1.0) < 1e-6);
      }
}

TEST_CASE("shifted windows only mix tokens from the same side of the wrap") {
  std::mt19937_64 rng(5);
  const int g = 8, m = 4, shift = 2, c = 4, T = 2;
  auto p = random_attention(c, 1, m, rng);
  PatchTokens x{testing::random_const({g * g, c}, rng), g, g};
  LatentTokens lat{testing::random_const({T, c}, rng)};
  const auto aug = attach_latent_tokens(window_partition(x, m), lat);
  const auto out = windowed_self_attention(aug, p, shift, g, g, true);
  const int per_row = g / m;
  for (int w = 0; w < static_cast<int>(aug.size()); ++w) {
    const auto& wt = out.weights[w][0].value();
    const int n = m * m + T;
    auto wrapped = [&](int slot) {
      const int r = (w / per_row) * m + slot / m, col = (w % per_row) * m + slot % m;
      return std::pair<bool, bool>{r + shift >= g, col + shift >= g};
    };
    for (int a = 0; a < m * m; ++a)
      for (int b = 0; b < m * m; ++b) {
        if (wrapped(a) == wrapped(b)) CHECK(wt[a * n + b] > 1e-12);
        else CHECK(wt[a * n + b] < 1e-12);
      }
    // Latent rows are never masked.
    for (int a = 0; a < n; ++a)
      for (int b = m * m; b < n; ++b) CHECK(wt[a * n + b] > 1e-12);
  }
}

TEST_CASE("latent merge sums replicas then normalizes") {
  const Var a = ad::constant({1, 2}, {1.0, 3.0});
  const Var b = ad::constant({1, 2}, {3.0, 1.0});
  const auto merged = merge_latent_replicas({a, b});
  CHECK(merged.tensor.value()[0] == 0.0);
  CHECK(merged.tensor.value()[1] == 0.0);
  CHECK(merge_latent_replicas({ad::constant({1, 3}, {2, 2, 2})}).tensor.value() == std::vector<double>{0, 0, 0});
  std::mt19937_64 rng(6);
  std::vector<Var> reps;
  for (int i = 0; i < 5; ++i) reps.push_back(testing::random_const({3, 4}, rng));
  const auto fwd = merge_latent_replicas(reps).tensor.value();
  std::reverse(reps.begin(), reps.end());
  CHECK(testing::max_abs_diff(fwd, merge_latent_replicas(reps).tensor.value()) < 1e-12);
  CHECK_THROWS_AS(merge_latent_replicas(std::vector<Var>{}), ArgumentError);
}

TEST_CASE("stage transition halves the grid and doubles widths") {
  Encoder enc(small_encoder(), 7);
  std::mt19937_64 rng(8);
  PatchTokens x{testing::random_const({64, 8}, rng), 8, 8};
  LatentTokens lat{testing::random_const({4, 8}, rng)};
  auto [px, pl] = stage_transition(x, lat, enc.transitions[0]);
  CHECK(px.grid_h == 4);
  CHECK(px.tensor.shape() == ad::Shape{16, 16});
  CHECK(pl.tensor.shape() == ad::Shape{4, 16});
  PatchTokens odd{testing::random_const({9, 8}, rng), 3, 3};
  CHECK_THROWS_AS(stage_transition(odd, lat, enc.transitions[0]), ConfigError);
}

TEST_CASE("encode produces the pyramid shape pattern and final latent width") {
  EncoderConfig cfg;  // 32px, patch 4, four stages
  cfg.latent_token_count = 8;
  Encoder enc(cfg, 9);
  std::mt19937_64 rng(10);
  const Var img = testing::random_const({3, 32, 32}, rng, 0.5);
  const auto out = enc.encode(img);
  REQUIRE(out.pyramid.maps.size() == 4);
  for (int s = 0; s < 4; ++s) {
    CHECK(out.pyramid.maps[s].side == 8 >> s);
    CHECK(out.pyramid.maps[s].tokens.shape() == ad::Shape{(8 >> s) * (8 >> s), 16 << s});
  }
  CHECK(out.latents.tensor.shape() == ad::Shape{8, 128});
  CHECK_THROWS_AS(enc.encode(testing::random_const({3, 16, 16}, rng)), ArgumentError);
}

TEST_CASE("shape laws hold across random valid configs") {
  std::mt19937_64 rng(11);
  int valid = 0;
  for (int trial = 0; trial < 60 && valid < 12; ++trial) {
    EncoderConfig cfg;
    cfg.image_size = 8 << (rng() % 3);
    cfg.patch_size = 1 << (rng() % 3);
    cfg.window_size = 1 << (1 + rng() % 2);
    cfg.stages = 1 + static_cast<int>(rng() % 3);
    cfg.stage_depths.assign(cfg.stages, 1 + static_cast<int>(rng() % 2));
    cfg.heads_per_stage.assign(cfg.stages, 1);
    cfg.base_channels = 4;
    cfg.latent_token_count = static_cast<int>(rng() % 4);
    cfg.w_dim = 3;
    cfg.head_hidden = 5;
    try {
      cfg.validate();
    } catch (const ConfigError&) {
      continue;
    }
    ++valid;
    Encoder enc(cfg, trial);
    const auto out = enc.encode(testing::random_const({3, cfg.image_size, cfg.image_size}, rng, 0.5));
    for (int s = 1; s <= cfg.stages; ++s) {
      const int side = cfg.image_size / (cfg.patch_size << (s - 1));
      CHECK(out.pyramid.maps[s - 1].side == side);
      CHECK(out.pyramid.maps[s - 1].tokens.shape() == ad::Shape{side * side, cfg.base_channels << (s - 1)});
    }
    if (cfg.latent_token_count > 0)
      CHECK(out.latents.tensor.shape() == ad::Shape{cfg.latent_token_count, cfg.base_channels << (cfg.stages - 1)});
  }
  CHECK(valid >= 8);
}

TEST_CASE("encoding is deterministic and sensitive to a single pixel") {
  Encoder enc(small_encoder(), 12);
  std::mt19937_64 rng(13);
  Var img = testing::random_const({3, 16, 16}, rng, 0.5);
  const auto a = enc.encode(img);
  const auto b = enc.encode(img);
  for (std::size_t s = 0; s < a.pyramid.maps.size(); ++s)
    CHECK(a.pyramid.maps[s].tokens.value() == b.pyramid.maps[s].tokens.value());
  std::vector<double> moved = img.value();
  moved[5] += 0.1;
  const auto c = enc.encode(ad::constant(img.shape(), moved));
  CHECK(testing::max_abs_diff(a.pyramid.maps[0].tokens.value(), c.pyramid.maps[0].tokens.value()) > 0.0);
}

TEST_CASE("zero latent tokens leave the backbone untouched") {
  Encoder enc(small_encoder(0), 14);
  std::mt19937_64 rng(15);
  const Var img = testing::random_const({3, 16, 16}, rng, 0.5);
  const auto full = enc.encode(img).pyramid;
  const auto plain = enc.encode_backbone(img);
  for (std::size_t s = 0; s < full.maps.size(); ++s) CHECK(full.maps[s].tokens.value() == plain.maps[s].tokens.value());

  // With tokens present they do take part in attention.
  Encoder with(small_encoder(4), 14);
  const auto aug = with.encode(img).pyramid;
  const auto base = with.encode_backbone(img);
  CHECK(testing::max_abs_diff(aug.maps[0].tokens.value(), base.maps[0].tokens.value()) > 0.0);
}

TEST_CASE("prediction head is residual to the average latent") {
  Encoder enc(small_encoder(), 16);
  std::mt19937_64 rng(17);
  LatentTokens lat{testing::random_const({4, 32}, rng)};
  const AverageLatent wbar{testing::randn(6, rng)};
  auto& h = enc.head;
  for (Var* v : {&h.w3, &h.b3}) v->mutable_value().assign(v->size(), 0.0);
  auto out = enc.predict(lat, wbar);
  CHECK(out.shape() == ad::Shape{4, 6});
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 6; ++c) CHECK(out.value()[r * 6 + c] == wbar.value[c]);
  h.b3.mutable_value() = {1, 2, 3, 4, 5, 6};
  out = enc.predict(lat, wbar);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 6; ++c) CHECK(out.value()[r * 6 + c] == wbar.value[c] + (c + 1));
  LatentTokens narrow{testing::random_const({4, 8}, rng)};
  CHECK_THROWS_AS(enc.predict(narrow, wbar), DimensionError);
}

TEST_CASE("encoder and head gradients match finite differences") {
  GradCheckOptions opt;
  opt.samples = 12;
  CHECK(gradient_check(GradComponent::LINEAR_HEAD, opt).max_rel_error <= 1e-4);
  CHECK(gradient_check(GradComponent::HEAD, opt).max_rel_error <= 1e-4);
  CHECK(gradient_check(GradComponent::ENCODER, opt).max_rel_error <= 1e-4);
}

TEST_CASE("complexity follows the closed forms") {
  CHECK(complexity(AttentionKind::MSA, 8, 8, 4, 0, 0) == 36864);
  std::mt19937_64 rng(18);
  for (int i = 0; i < 200; ++i) {
    const std::uint64_t h = 1 + rng() % 64, w = 1 + rng() % 64, C = 1 + rng() % 256, M = 1 + rng() % 16,
                        T = rng() % 32;
    CHECK(complexity(AttentionKind::MSA, h, w, C, M, T) == testing::oracle_msa(h, w, C));
    CHECK(complexity(AttentionKind::WMSA, h, w, C, M, T) == testing::oracle_wmsa(h, w, C, M));
    CHECK(complexity(AttentionKind::WMSA_LATENT, h, w, C, M, T) == testing::oracle_wmsa_latent(h, w, C, M, T));
    CHECK(complexity(AttentionKind::WMSA_LATENT, h, w, C, M, 0) == complexity(AttentionKind::WMSA, h, w, C, M, 0));
  }
  // A single window covering the grid is plain MSA.
  CHECK(complexity(AttentionKind::WMSA, 4, 4, 8, 4, 0) == complexity(AttentionKind::MSA, 4, 4, 8, 0, 0));
  CHECK_THROWS_AS(complexity(AttentionKind::MSA, 0, 4, 4, 0, 0), ArgumentError);
  CHECK_THROWS_AS(complexity(AttentionKind::WMSA, 4, 4, 4, 0, 0), ArgumentError);
  CHECK(attention_kind_from_string("w-msa*") == AttentionKind::WMSA_LATENT);
  CHECK_THROWS_AS(attention_kind_from_string("nope"), ArgumentError);
}

TEST_CASE("encoder config JSON round-trips and validates") {
  const auto cfg = small_encoder();
  const auto back = encoder_config_from_json(to_json(cfg));
  CHECK(to_json(back) == to_json(cfg));
  auto bad = cfg;
  bad.patch_size = 3;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}
