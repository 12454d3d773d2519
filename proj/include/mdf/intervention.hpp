// Copyright 2026 The MDF Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <memory>
#include <vector>

#include <nlohmann/json.hpp>

#include "mdf/model.hpp"
#include "mdf/signature.hpp"

namespace mdf {

// residual(l) += alpha * signature[l] for each selected layer.
struct InterventionSpec {
  std::shared_ptr<const DataFeatureSignature> signature;
  double alpha = 0.0;
  std::vector<std::size_t> layers;  // empty = every layer of the signature
  PositionSelector positions;

  void validate() const;
  std::vector<std::size_t> effective_layers() const;
};

// Directives for model_runtime; the f64 product is rounded to f32 once here.
// alpha == 0 yields an empty set.
InjectionSet apply(const InterventionSpec& spec, std::size_t d_model);

enum class GridMode { predict, analyze };

struct SweepGrid {
  std::vector<double> alphas;
  bool viability_check = true;

  void validate() const;
  bool contains(double alpha) const;
};

// predict: 0, 0.5, ..., 8 (17 points); analyze: -3, -2, ..., 3.
SweepGrid make_default_grid(GridMode mode);

GridMode parse_grid_mode(std::string_view s);

}  // namespace mdf
