#include "latinv/nn.hpp"

#include <unordered_map>

#include "latinv/errors.hpp"

namespace latinv {

std::vector<double> standard_normal(std::size_t n, Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> out(n);
  for (auto& v : out) v = dist(rng);
  return out;
}

ad::Var normal_param(ad::Shape shape, double stddev, Rng& rng) {
  auto values = standard_normal(ad::numel(shape), rng);
  for (auto& v : values) v *= stddev;
  return ad::parameter(std::move(shape), std::move(values));
}

ad::Var constant_param(ad::Shape shape, double fill) {
  const auto n = ad::numel(shape);
  return ad::parameter(std::move(shape), std::vector<double>(n, fill));
}

void assign_parameters(const NamedParams& target, const NamedParams& source) {
  std::unordered_map<std::string, const ad::Var*> by_name;
  for (const auto& [name, var] : source) by_name[name] = &var;
  for (const auto& [name, var] : target) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ArgumentError("missing parameter '" + name + "'");
    if (it->second->shape() != var.shape()) throw DimensionError("shape mismatch for parameter '" + name + "'");
    ad::Var dst = var;
    dst.mutable_value() = it->second->value();
  }
}

void set_trainable(const NamedParams& params, bool trainable) {
  for (const auto& [name, var] : params) {
    ad::Var v = var;
    v.set_requires_grad(trainable);
  }
}

std::vector<std::vector<double>> snapshot(const NamedParams& params) {
  std::vector<std::vector<double>> out;
  out.reserve(params.size());
  for (const auto& [name, var] : params) out.push_back(var.value());
  return out;
}

}  // namespace latinv
