#pragma once

// Parameter initialization and naming helpers shared by the model modules.

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "latinv/autodiff.hpp"

namespace latinv {

using Rng = std::mt19937_64;
using NamedParams = std::vector<std::pair<std::string, ad::Var>>;

ad::Var normal_param(ad::Shape shape, double stddev, Rng& rng);
ad::Var constant_param(ad::Shape shape, double fill);

/// Copies `source` values into the same-named entries of `target`, checking
/// shapes. Throws DimensionError on mismatch and ArgumentError on a missing name.
void assign_parameters(const NamedParams& target, const NamedParams& source);

/// Marks every parameter trainable or frozen.
void set_trainable(const NamedParams& params, bool trainable);

/// Deep copy of parameter values, for before/after comparisons.
std::vector<std::vector<double>> snapshot(const NamedParams& params);

std::vector<double> standard_normal(std::size_t n, Rng& rng);

}  // namespace latinv
