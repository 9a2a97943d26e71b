#include "latinv/latent_spaces.hpp"

#include <cmath>
#include <set>
#include <sstream>

#include "latinv/errors.hpp"

namespace latinv {

namespace {

std::string shape_of(const LatentCode& c) {
  return std::to_string(c.layers()) + "x" + std::to_string(c.channels());
}

void require_same_shape(const LatentCode& a, const LatentCode& b, const char* op) {
  if (!a.same_shape(b)) throw DimensionError(std::string(op) + ": shape " + shape_of(a) + " vs " + shape_of(b));
}

}  // namespace

LatentCode::LatentCode(int layers, int channels, std::vector<double> values)
    : layers_(layers), channels_(channels), values_(std::move(values)) {
  if (layers < 1 || channels < 1) throw DimensionError("latent code needs L >= 1 and d >= 1");
  if (values_.size() != static_cast<std::size_t>(layers) * channels)
    throw DimensionError("latent code value count does not match " + shape_of(*this));
  for (double v : values_)
    if (!std::isfinite(v)) throw NumericError("latent code has a non-finite entry");
}

LatentCode LatentCode::zeros(int layers, int channels) {
  return LatentCode(layers, channels, std::vector<double>(static_cast<std::size_t>(layers) * channels, 0.0));
}

LatentCode LatentCode::broadcast(std::span<const double> row, int layers) {
  std::vector<double> values;
  values.reserve(row.size() * layers);
  for (int l = 0; l < layers; ++l) values.insert(values.end(), row.begin(), row.end());
  return LatentCode(layers, static_cast<int>(row.size()), std::move(values));
}

std::span<const double> LatentCode::row(int layer) const {
  if (layer < 0 || layer >= layers_) throw ArgumentError("latent row out of range");
  return {values_.data() + index(layer, 0), static_cast<std::size_t>(channels_)};
}

bool LatentCode::lies_in_w() const {
  for (int l = 1; l < layers_; ++l)
    for (int c = 0; c < channels_; ++c)
      if (at(l, c) != at(0, c)) return false;
  return true;
}

LatentCode apply_edit(const LatentCode& w_inv, const EditDirection& dir, double alpha) {
  require_same_shape(w_inv, dir.delta, "apply_edit");
  std::vector<double> out = w_inv.values();
  const auto& d = dir.delta.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += alpha * d[i];
  return LatentCode(w_inv.layers(), w_inv.channels(), std::move(out));
}

LatentCode style_mix_progressive(const LatentCode& w_s, const LatentCode& w_r, int k) {
  require_same_shape(w_s, w_r, "style_mix_progressive");
  if (k < 0 || k > w_s.layers())
    throw ArgumentError("style_mix_progressive: k must lie in [0, " + std::to_string(w_s.layers()) + "]");
  LatentCode out = w_s;
  for (int l = 0; l < k; ++l)
    for (int c = 0; c < w_s.channels(); ++c) out.at(l, c) = w_r.at(l, c);
  return out;
}

LatentCode style_mix_exchange(const LatentCode& w_s, const LatentCode& w_r, int k) {
  require_same_shape(w_s, w_r, "style_mix_exchange");
  if (k < 1 || k > w_s.layers())
    throw ArgumentError("style_mix_exchange: k must lie in [1, " + std::to_string(w_s.layers()) + "]");
  LatentCode out = w_s;
  for (int c = 0; c < w_s.channels(); ++c) out.at(k - 1, c) = w_r.at(k - 1, c);
  return out;
}

LatentCode style_mix_interpolate(const LatentCode& w_r, const LatentCode& w_s, double sigma) {
  require_same_shape(w_r, w_s, "style_mix_interpolate");
  if (!(sigma >= 0.0 && sigma <= 1.0)) throw ArgumentError("style_mix_interpolate: sigma must lie in [0, 1]");
  std::vector<double> out(w_r.values().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (1.0 - sigma) * w_r.values()[i] + sigma * w_s.values()[i];
  return LatentCode(w_r.layers(), w_r.channels(), std::move(out));
}

double dispersion(std::span<const LatentCode> codes) {
  if (codes.empty()) throw ArgumentError("dispersion: empty code list");
  double total = 0.0;
  for (const auto& code : codes) {
    require_same_shape(codes[0], code, "dispersion");
    const int layers = code.layers();
    double channel_sum = 0.0;
    for (int c = 0; c < code.channels(); ++c) {
      // Shifted by the first row so identical rows give exactly zero.
      const double origin = code.at(0, c);
      double mu = 0.0;
      for (int l = 0; l < layers; ++l) mu += code.at(l, c) - origin;
      mu /= layers;
      double var = 0.0;
      for (int l = 0; l < layers; ++l) {
        const double d = code.at(l, c) - origin - mu;
        var += d * d;
      }
      channel_sum += std::sqrt(var / layers);
    }
    total += channel_sum / code.channels();
  }
  return total / static_cast<double>(codes.size());
}

double distance_to_w(std::span<const LatentCode> codes, std::span<const LatentCode> refs) {
  if (codes.size() != refs.size()) throw ArgumentError("distance_to_w: code and reference counts differ");
  if (codes.empty()) throw ArgumentError("distance_to_w: empty code list");
  double total = 0.0;
  for (std::size_t i = 0; i < codes.size(); ++i) {
    require_same_shape(codes[0], codes[i], "distance_to_w");
    require_same_shape(codes[i], refs[i], "distance_to_w");
    if (!refs[i].lies_in_w()) throw ArgumentError("distance_to_w: reference " + std::to_string(i) + " is not in W");
    double layer_sum = 0.0;
    for (int l = 0; l < codes[i].layers(); ++l) {
      double l1 = 0.0;
      for (int c = 0; c < codes[i].channels(); ++c) l1 += std::abs(codes[i].at(l, c) - refs[i].at(l, c));
      layer_sum += l1;
    }
    total += layer_sum / codes[i].layers();
  }
  return total / static_cast<double>(codes.size());
}

CorrelationTable layer_correlation_table(const LatentCode& code, const LatentCode& ref, int first, int last) {
  require_same_shape(code, ref, "layer_correlation_table");
  if (first < 0 || last < first || last > code.channels())
    throw ArgumentError("layer_correlation_table: channel range out of [0, d)");
  CorrelationTable table;
  table.first_channel = first;
  const int width = last - first;
  if (width == 0) return table;
  std::vector<double> a, b;
  for (int l = 0; l < code.layers(); ++l)
    for (int c = first; c < last; ++c) {
      a.push_back(code.at(l, c));
      b.push_back(ref.at(l, c));
    }
  table.code = LatentCode(code.layers(), width, std::move(a));
  table.ref = LatentCode(code.layers(), width, std::move(b));
  return table;
}

std::string correlation_csv(const CorrelationTable& table) {
  std::ostringstream out;
  out.precision(17);
  out << "layer,channel,value,reference\n";
  for (int l = 0; l < table.code.layers(); ++l)
    for (int c = 0; c < table.code.channels(); ++c)
      out << l + 1 << ',' << table.first_channel + c << ',' << table.code.at(l, c) << ',' << table.ref.at(l, c)
          << '\n';
  return out.str();
}

nlohmann::json to_json(const LatentCode& code) {
  nlohmann::json rows = nlohmann::json::array();
  for (int l = 0; l < code.layers(); ++l) {
    auto r = code.row(l);
    rows.push_back(std::vector<double>(r.begin(), r.end()));
  }
  return {{"layers", rows}};
}

namespace {

LatentCode rows_to_code(const nlohmann::json& rows) {
  if (!rows.is_array() || rows.empty()) throw ArgumentError("latent JSON: expected a non-empty array of rows");
  std::vector<double> values;
  std::size_t width = 0;
  for (const auto& r : rows) {
    if (!r.is_array()) throw ArgumentError("latent JSON: rows must be arrays");
    if (width == 0) width = r.size();
    if (r.size() != width || width == 0) throw DimensionError("latent JSON: ragged rows");
    for (const auto& v : r) {
      if (!v.is_number()) throw ArgumentError("latent JSON: non-numeric entry");
      values.push_back(v.get<double>());
    }
  }
  return LatentCode(static_cast<int>(rows.size()), static_cast<int>(width), std::move(values));
}

}  // namespace

LatentCode latent_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("layers")) throw ArgumentError("latent JSON: missing \"layers\"");
  return rows_to_code(j.at("layers"));
}

nlohmann::json directions_to_json(std::span<const EditDirection> catalog) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& d : catalog) out.push_back({{"name", d.name}, {"delta", to_json(d.delta).at("layers")}});
  return out;
}

std::vector<EditDirection> directions_from_json(const nlohmann::json& j, int layers) {
  if (!j.is_array()) throw ArgumentError("direction catalog: expected a JSON array");
  std::vector<EditDirection> out;
  std::set<std::string> seen;
  for (const auto& item : j) {
    if (!item.is_object() || !item.contains("name") || !item.contains("delta"))
      throw ArgumentError("direction catalog: entries need \"name\" and \"delta\"");
    EditDirection d;
    d.name = item.at("name").get<std::string>();
    if (!seen.insert(d.name).second) throw ArgumentError("direction catalog: duplicate name '" + d.name + "'");
    const auto& delta = item.at("delta");
    if (!delta.empty() && delta.front().is_number()) {
      // A bare vector is a W direction.
      d.delta = rows_to_code(nlohmann::json::array({delta}));
    } else {
      d.delta = rows_to_code(delta);
    }
    if (layers > 0 && d.delta.layers() == 1 && layers != 1) d.delta = LatentCode::broadcast(d.delta.row(0), layers);
    out.push_back(std::move(d));
  }
  return out;
}

}  // namespace latinv
