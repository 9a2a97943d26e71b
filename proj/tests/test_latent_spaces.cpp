#include <doctest.h>

#include <algorithm>

#include "latinv/errors.hpp"
#include "latinv/latent_spaces.hpp"
#include "support.hpp"

using namespace latinv;

namespace {

LatentCode random_code(int L, int d, std::mt19937_64& rng) { return LatentCode(L, d, testing::randn(L * d, rng)); }

}  // namespace

TEST_CASE("latent code construction validates shape and finiteness") {
  CHECK_THROWS_AS(LatentCode(0, 3, {}), DimensionError);
  CHECK_THROWS_AS(LatentCode(2, 2, {1, 2, 3}), DimensionError);
  CHECK_THROWS_AS(LatentCode(1, 1, {NAN}), NumericError);
  const std::vector<double> row{1.0, -2.0};
  const auto w = LatentCode::broadcast(row, 4);
  CHECK(w.layers() == 4);
  CHECK(w.lies_in_w());
  CHECK_FALSE(LatentCode(2, 1, {0, 1}).lies_in_w());
}

TEST_CASE("apply_edit moves every layer by alpha times the direction") {
  std::mt19937_64 rng(1);
  const auto w = random_code(5, 3, rng);
  const EditDirection dir{"d", random_code(5, 3, rng)};
  CHECK(apply_edit(w, dir, 0.0) == w);
  const auto e = apply_edit(w, dir, 1.5);
  for (int l = 0; l < 5; ++l)
    for (int c = 0; c < 3; ++c) CHECK(e.at(l, c) == w.at(l, c) + 1.5 * dir.delta.at(l, c));
  CHECK_THROWS_AS(apply_edit(w, {"bad", LatentCode::zeros(4, 3)}, 1.0), DimensionError);
}

TEST_CASE("style mixing identities hold exactly") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const int L = 2 + trial % 7;
    const auto ws = random_code(L, 4, rng);
    const auto wr = random_code(L, 4, rng);
    CHECK(style_mix_progressive(ws, wr, 0) == ws);
    CHECK(style_mix_progressive(ws, wr, L) == wr);
    CHECK(style_mix_interpolate(wr, ws, 1.0) == ws);
    CHECK(style_mix_interpolate(wr, ws, 0.0) == wr);
    for (int k = 1; k <= L; ++k) CHECK(style_mix_exchange(ws, ws, k) == ws);
  }
}

TEST_CASE("progressive and exchange mixing take the expected rows") {
  const LatentCode ws(3, 1, {1, 2, 3});
  const LatentCode wr(3, 1, {10, 20, 30});
  CHECK(style_mix_progressive(ws, wr, 2) == LatentCode(3, 1, {10, 20, 3}));
  CHECK(style_mix_exchange(ws, wr, 2) == LatentCode(3, 1, {1, 20, 3}));
  CHECK(style_mix_interpolate(wr, ws, 0.25) == LatentCode(3, 1, {7.75, 15.5, 23.25}));
  CHECK_THROWS_AS(style_mix_progressive(ws, wr, 4), ArgumentError);
  CHECK_THROWS_AS(style_mix_exchange(ws, wr, 0), ArgumentError);
  CHECK_THROWS_AS(style_mix_interpolate(wr, ws, 1.5), ArgumentError);
}

TEST_CASE("progressive mixing sweeps from source to reference") {
  std::mt19937_64 rng(3);
  const auto ws = random_code(6, 2, rng), wr = random_code(6, 2, rng);
  for (int k = 0; k <= 6; ++k) {
    const auto m = style_mix_progressive(ws, wr, k);
    for (int l = 0; l < 6; ++l) CHECK(std::equal(m.row(l).begin(), m.row(l).end(), (l < k ? wr : ws).row(l).begin()));
  }
}

TEST_CASE("dispersion matches hand-computed values") {
  const std::vector<LatentCode> single{LatentCode(2, 1, {0, 2})};
  CHECK(dispersion(single) == 1.0);
  // Channel stds 1 and 2, averaged.
  const std::vector<LatentCode> two{LatentCode(2, 2, {1, 3, 3, 7})};
  CHECK(std::abs(dispersion(two) - 1.5) < 1e-12);
  CHECK_THROWS_AS(dispersion(std::vector<LatentCode>{}), ArgumentError);
}

TEST_CASE("dispersion of W-space codes is exactly zero") {
  std::mt19937_64 rng(4);
  std::vector<LatentCode> codes;
  for (int i = 0; i < 10; ++i) {
    const auto row = testing::randn(16, rng);
    codes.push_back(LatentCode::broadcast(row, 1 + i));
  }
  for (const auto& c : codes) CHECK(dispersion(std::vector<LatentCode>{c}) == 0.0);
}

TEST_CASE("distance_to_w matches hand-computed values") {
  const std::vector<LatentCode> codes{LatentCode(2, 2, {1, 2, 0, 0})};
  const std::vector<LatentCode> refs{LatentCode::zeros(2, 2)};
  CHECK(std::abs(distance_to_w(codes, refs) - 1.5) < 1e-12);
  CHECK(distance_to_w(refs, refs) == 0.0);
  const std::vector<LatentCode> not_w{LatentCode(2, 2, {1, 2, 0, 0})};
  CHECK_THROWS_AS(distance_to_w(codes, not_w), ArgumentError);
  CHECK_THROWS_AS(distance_to_w(codes, std::vector<LatentCode>{}), ArgumentError);
}

TEST_CASE("distance_to_w is invariant to permuting pairs") {
  std::mt19937_64 rng(5);
  std::vector<LatentCode> codes, refs;
  for (int i = 0; i < 6; ++i) {
    codes.push_back(random_code(4, 3, rng));
    refs.push_back(LatentCode::broadcast(testing::randn(3, rng), 4));
  }
  const double base = distance_to_w(codes, refs);
  std::reverse(codes.begin(), codes.end());
  std::reverse(refs.begin(), refs.end());
  CHECK(distance_to_w(codes, refs) == doctest::Approx(base).epsilon(1e-14));
}

TEST_CASE("layer correlation table slices channels") {
  const LatentCode code(2, 4, {0, 1, 2, 3, 4, 5, 6, 7});
  const auto ref = LatentCode::zeros(2, 4);
  const auto t = layer_correlation_table(code, ref, 1, 3);
  CHECK(t.code == LatentCode(2, 2, {1, 2, 5, 6}));
  CHECK(layer_correlation_table(code, ref, 0, 4).code == code);
  const auto empty = layer_correlation_table(code, ref, 2, 2);
  CHECK(empty.code.values().empty());
  CHECK_THROWS_AS(layer_correlation_table(code, ref, 3, 5), ArgumentError);
  const std::string csv = correlation_csv(t);
  CHECK(csv.rfind("layer,channel,value,reference\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
}

TEST_CASE("latent and direction JSON round-trip") {
  std::mt19937_64 rng(6);
  const auto code = random_code(3, 5, rng);
  CHECK(latent_from_json(to_json(code)) == code);
  const std::vector<EditDirection> cat{{"smile", random_code(3, 5, rng)}, {"age", random_code(3, 5, rng)}};
  const auto back = directions_from_json(directions_to_json(cat));
  REQUIRE(back.size() == 2);
  CHECK(back[1].name == "age");
  CHECK(back[1].delta == cat[1].delta);
}

TEST_CASE("a bare-vector direction is broadcast and duplicates are rejected") {
  const auto j = nlohmann::json::parse(R"([{"name": "w", "delta": [1, 2]}])");
  const auto d = directions_from_json(j, 4);
  CHECK(d[0].delta.layers() == 4);
  CHECK(d[0].delta.lies_in_w());
  const auto dup = nlohmann::json::parse(R"([{"name": "a", "delta": [1]}, {"name": "a", "delta": [2]}])");
  CHECK_THROWS_AS(directions_from_json(dup), ArgumentError);
  CHECK_THROWS_AS(latent_from_json(nlohmann::json::parse(R"({"layers": [[1, 2], [3]]})")), DimensionError);
}
