#pragma once

// Latent code containers for W / W+ and the editing, style-mixing, and
// disentanglement-metric operations defined over them. Everything here is a
// pure function of immutable values.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace latinv {

/// Per-layer latent rows, L x d, row-major. A code lies in W when all rows
/// are identical.
class LatentCode {
 public:
  LatentCode() = default;
  LatentCode(int layers, int channels, std::vector<double> values);
  static LatentCode zeros(int layers, int channels);
  /// Repeats `row` on every layer.
  static LatentCode broadcast(std::span<const double> row, int layers);

  int layers() const { return layers_; }
  int channels() const { return channels_; }
  const std::vector<double>& values() const { return values_; }

  double at(int layer, int channel) const { return values_[index(layer, channel)]; }
  double& at(int layer, int channel) { return values_[index(layer, channel)]; }
  std::span<const double> row(int layer) const;

  bool lies_in_w() const;
  bool same_shape(const LatentCode& other) const {
    return layers_ == other.layers_ && channels_ == other.channels_;
  }

  friend bool operator==(const LatentCode&, const LatentCode&) = default;

 private:
  std::size_t index(int layer, int channel) const {
    return static_cast<std::size_t>(layer) * channels_ + channel;
  }

  int layers_ = 0;
  int channels_ = 0;
  std::vector<double> values_;
};

/// Monte Carlo mean of mapped latents, length d.
struct AverageLatent {
  std::vector<double> value;
};

struct EditDirection {
  std::string name;
  LatentCode delta;
};

/// Row-major sub-matrices of a code and its reference over a channel range.
struct CorrelationTable {
  int first_channel = 0;
  LatentCode code;
  LatentCode ref;
};

LatentCode apply_edit(const LatentCode& w_inv, const EditDirection& dir, double alpha);

/// Rows 1..k from `w_r`, the rest from `w_s` (1-based rows, 0 <= k <= L).
LatentCode style_mix_progressive(const LatentCode& w_s, const LatentCode& w_r, int k);
/// `w_s` with row k (1-based) taken from `w_r`.
LatentCode style_mix_exchange(const LatentCode& w_s, const LatentCode& w_r, int k);
/// (1 - sigma) * w_r + sigma * w_s.
LatentCode style_mix_interpolate(const LatentCode& w_r, const LatentCode& w_s, double sigma);

/// Mean over codes of the channel-averaged population std across layers.
double dispersion(std::span<const LatentCode> codes);
/// Mean over pairs of the layer-averaged L1 distance to a W reference.
double distance_to_w(std::span<const LatentCode> codes, std::span<const LatentCode> refs);
/// Columns [first, last) of `code` and `ref`.
CorrelationTable layer_correlation_table(const LatentCode& code, const LatentCode& ref, int first, int last);
/// One CSV row per (layer, channel): layer,channel,value,reference.
std::string correlation_csv(const CorrelationTable& table);

// JSON forms: {"layers": [[...], ...]} and [{"name": ..., "delta": [[...]]}].
nlohmann::json to_json(const LatentCode& code);
LatentCode latent_from_json(const nlohmann::json& j);
nlohmann::json directions_to_json(std::span<const EditDirection> catalog);
/// Rejects duplicate names. A single-row delta is broadcast to `layers` rows
/// when `layers` > 0.
std::vector<EditDirection> directions_from_json(const nlohmann::json& j, int layers = 0);

}  // namespace latinv
