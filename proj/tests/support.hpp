#pragma once

// Shared fixtures and brute-force oracles for the test binaries. The oracles
// are written from the defining rules with plain loops and never call the
// library code they are compared against.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "latinv/autodiff.hpp"
#include "latinv/encoder.hpp"
#include "latinv/models.hpp"
#include "latinv/smart.hpp"

namespace testing {

using latinv::ad::Var;

inline std::vector<double> randn(std::size_t n, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  std::vector<double> v(n);
  for (auto& x : v) x = nd(rng);
  return v;
}

inline Var random_const(latinv::ad::Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return latinv::ad::constant(std::move(shape), randn(n, rng, scale));
}

inline void randomize(const latinv::NamedParams& params, std::mt19937_64& rng, double scale) {
  for (const auto& [name, v] : params) {
    auto& val = v.ptr()->value;
    val = randn(val.size(), rng, scale);
  }
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double max_abs(const std::vector<double>& a) {
  double m = 0.0;
  for (double x : a) m = std::max(m, std::abs(x));
  return m;
}

/// Pyramid with one level per side, random token values.
inline latinv::PyramidFeatures random_pyramid(const std::vector<int>& sides, const std::vector<int>& channels,
                                              std::mt19937_64& rng, double scale = 1.0) {
  latinv::PyramidFeatures p;
  for (std::size_t s = 0; s < sides.size(); ++s)
    p.maps.push_back({random_const({sides[s] * sides[s], channels[s]}, rng, scale), sides[s]});
  return p;
}

// --- index map oracle ---------------------------------------------------------

/// Pyramid cell a (along one axis) is read by feature cell i when the two
/// cells overlap with positive length on the unit interval:
/// [i/HF, (i+1)/HF) and [a/HP, (a+1)/HP).
inline bool cells_overlap(int i, int hf, int a, int hp) {
  return static_cast<long>(i) * hp < static_cast<long>(a + 1) * hf &&
         static_cast<long>(a) * hf < static_cast<long>(i + 1) * hp;
}

/// Sorted flat targets of feature position (i, j) in a pyramid of side hp.
inline std::vector<int> oracle_targets(int i, int j, int hf, int hp) {
  std::vector<int> out;
  for (int a = 0; a < hp; ++a)
    for (int b = 0; b < hp; ++b)
      if (cells_overlap(i, hf, a, hp) && cells_overlap(j, hf, b, hp)) out.push_back(a * hp + b);
  return out;
}

inline int clampi(int v, int lo, int hi) { return std::min(std::max(v, lo), hi); }

// --- SMART oracle ---------------------------------------------------------------

struct DenseParams {
  std::vector<double> w;  // [in, out] row-major
  std::vector<double> b;  // [out]
  int in = 0, out = 0;
};

inline DenseParams dense(const Var& w, const Var& b) {
  return {w.value(), b.value(), w.dim(0), w.dim(1)};
}

inline std::vector<double> apply_dense(const DenseParams& p, const double* x) {
  std::vector<double> y(p.b);
  for (int i = 0; i < p.in; ++i)
    for (int o = 0; o < p.out; ++o) y[o] += x[i] * p.w[static_cast<std::size_t>(i) * p.out + o];
  return y;
}

/// Per-query loop evaluation of the attention branch, [n_F, C_F] row-major.
/// `dy`/`dx` (optional, row-major over queries) shift the position whose
/// targets each query reads, clamped to the grid.
inline std::vector<double> oracle_attention(const Var& feature, const latinv::PyramidFeatures& pyr,
                                            const latinv::SmartParams& sp, double beta1,
                                            const std::vector<int>* dy = nullptr,
                                            const std::vector<int>* dx = nullptr) {
  const int cf = feature.dim(0), h = feature.dim(1), w = feature.dim(2);
  const auto& fv = feature.value();
  const DenseParams pq = dense(sp.wq, sp.bq);
  const int a = pq.out, heads = sp.heads;
  std::vector<double> out(static_cast<std::size_t>(h) * w * cf, 0.0);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      const int qi = i * w + j;
      std::vector<double> x(cf);
      for (int c = 0; c < cf; ++c) x[c] = fv[(static_cast<std::size_t>(c) * h + i) * w + j];
      const auto q = apply_dense(pq, x.data());
      int si = i, sj = j;
      if (dy) si = clampi(i + (*dy)[qi], 0, h - 1);
      if (dx) sj = clampi(j + (*dx)[qi], 0, w - 1);
      for (std::size_t s = 0; s < pyr.maps.size(); ++s) {
        const auto& lvl = pyr.maps[s];
        const int cs = lvl.tokens.dim(1);
        const DenseParams pk = dense(sp.wk[s], sp.bk[s]);
        const DenseParams pv = dense(sp.wv[s], sp.bv[s]);
        for (int t : oracle_targets(si, sj, h, lvl.side)) {
          const double* p = lvl.tokens.value().data() + static_cast<std::size_t>(t) * cs;
          const auto k = apply_dense(pk, p);
          const auto v = apply_dense(pv, p);
          for (int hd = 0; hd < heads; ++hd) {
            const int qa = a / heads, vc = cf / heads;
            double dot = 0.0;
            for (int e = hd * qa; e < (hd + 1) * qa; ++e) dot += q[e] * k[e];
            for (int c = hd * vc; c < (hd + 1) * vc; ++c)
              out[static_cast<std::size_t>(qi) * cf + c] += dot * (beta1 * v[c]);
          }
        }
      }
    }
  return out;
}

/// Full refinement by loops, returned as CHW.
inline std::vector<double> oracle_refine(const Var& feature, const latinv::PyramidFeatures& pyr,
                                         const latinv::SmartParams& sp, double beta1, double beta2,
                                         const std::vector<int>* dy = nullptr, const std::vector<int>* dx = nullptr) {
  const int cf = feature.dim(0), h = feature.dim(1), w = feature.dim(2);
  const auto att = oracle_attention(feature, pyr, sp, beta1, dy, dx);
  const DenseParams f1 = dense(sp.w1, sp.b1), f2 = dense(sp.w2, sp.b2);
  std::vector<double> out(feature.value().size());
  for (int p = 0; p < h * w; ++p) {
    std::vector<double> hat(cf);
    for (int c = 0; c < cf; ++c) hat[c] = att[static_cast<std::size_t>(p) * cf + c] + feature.value()[static_cast<std::size_t>(c) * h * w + p];
    auto hid = apply_dense(f1, hat.data());
    for (auto& v : hid) v = std::max(0.0, v);
    const auto ffn = apply_dense(f2, hid.data());
    for (int c = 0; c < cf; ++c) out[static_cast<std::size_t>(c) * h * w + p] = beta2 * ffn[c] + hat[c];
  }
  return out;
}

/// SMART parameters for an arbitrary geometry with every weight random.
inline latinv::SmartParams random_smart(int cf, const std::vector<int>& sides, const std::vector<int>& channels,
                                        int attn_width, int heads, std::uint64_t seed, double scale) {
  latinv::SmartConfig cfg;
  cfg.feature_channels = cf;
  cfg.feature_side = 1;
  cfg.pyramid_sides = sides;
  cfg.pyramid_channels = channels;
  cfg.attn_width = attn_width;
  cfg.heads = heads;
  cfg.ffn_hidden = 2 * cf;
  auto sp = latinv::init_smart_params(cfg, seed);
  std::mt19937_64 rng(seed ^ 0x5eedULL);
  randomize(sp.named_parameters(), rng, scale);
  return sp;
}

// --- complexity oracle ------------------------------------------------------------

inline std::uint64_t oracle_msa(std::uint64_t h, std::uint64_t w, std::uint64_t c) {
  const std::uint64_t n = h * w;
  return 4 * n * c * c + 2 * n * n * c;
}

inline std::uint64_t oracle_wmsa(std::uint64_t h, std::uint64_t w, std::uint64_t c, std::uint64_t m) {
  const std::uint64_t n = h * w;
  return 4 * n * c * c + 2 * m * m * n * c;
}

inline std::uint64_t oracle_wmsa_latent(std::uint64_t h, std::uint64_t w, std::uint64_t c, std::uint64_t m,
                                        std::uint64_t t) {
  const std::uint64_t n = h * w + t;
  return 4 * n * c * c + 2 * m * m * n * c;
}

// --- misc ------------------------------------------------------------------------

/// Fresh directory under the system temp path, removed on destruction.
struct TempDir {
  std::filesystem::path path;
  TempDir() {
    std::random_device rd;
    path = std::filesystem::temp_directory_path() / ("latinv-test-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

/// Small, fast model set: 16x16 generator, 4-stage encoder, SMART at layer 3.
inline latinv::ModelConfig tiny_model_config(std::uint64_t seed = 3) {
  latinv::ModelConfig cfg;
  cfg.generator.output_size = 16;
  cfg.generator.z_dim = 8;
  cfg.generator.w_dim = 8;
  cfg.generator.base_feature_channels = 8;
  cfg.generator.mapping_depth = 2;
  cfg.encoder.image_size = 16;
  cfg.encoder.patch_size = 2;
  cfg.encoder.window_size = 4;
  cfg.encoder.stages = 3;
  cfg.encoder.stage_depths = {2, 2, 2};
  cfg.encoder.heads_per_stage = {1, 2, 2};
  cfg.encoder.base_channels = 8;
  cfg.encoder.head_hidden = 16;
  cfg.smart.layer = 3;
  cfg.smart.attn_width = 8;
  cfg.average_samples = 64;
  cfg.seed = seed;
  return latinv::resolve_model_config(cfg);
}

}  // namespace testing
