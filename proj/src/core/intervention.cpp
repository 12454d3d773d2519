// Copyright 2026 The MDF Authors
// SPDX-License-Identifier: Apache-2.0

#include "mdf/intervention.hpp"

#include <algorithm>
#include <cmath>

#include "mdf/error.hpp"

namespace mdf {

std::vector<std::size_t> InterventionSpec::effective_layers() const {
  if (!layers.empty()) {
    return layers;
  }
  return signature ? signature->layer_indices() : std::vector<std::size_t>{};
}

void InterventionSpec::validate() const {
  if (!signature) {
    fail(ErrorCode::invalid_argument, "intervention: no signature");
  }
  if (!std::isfinite(alpha)) {
    fail(ErrorCode::invalid_argument, "intervention: alpha must be finite");
  }
  for (std::size_t l : layers) {
    if (!signature->layers.count(l)) {
      fail(ErrorCode::invalid_argument, "intervention: layer %zu is absent from the signature", l);
    }
  }
}

InjectionSet apply(const InterventionSpec& spec, std::size_t d_model) {
  spec.validate();
  if (spec.signature->d_model != d_model) {
    fail(ErrorCode::shape, "intervention: signature d_model %zu does not match model d_model %zu",
         spec.signature->d_model, d_model);
  }
  InjectionSet out;
  if (spec.alpha == 0.0) {
    return out;
  }
  for (std::size_t l : spec.effective_layers()) {
    const auto& v = spec.signature->layers.at(l);
    Injection inj;
    inj.layer = l;
    inj.positions = spec.positions;
    inj.delta.resize(d_model);
    for (std::size_t i = 0; i < d_model; ++i) {
      inj.delta[i] = static_cast<float>(spec.alpha * v[i]);
    }
    out.push_back(std::move(inj));
  }
  return out;
}

void SweepGrid::validate() const {
  if (alphas.empty()) {
    fail(ErrorCode::invalid_argument, "sweep grid is empty");
  }
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    if (!std::isfinite(alphas[i])) {
      fail(ErrorCode::invalid_argument, "sweep grid contains a non-finite alpha");
    }
    if (i > 0 && !(alphas[i] > alphas[i - 1])) {
      fail(ErrorCode::invalid_argument, "sweep grid alphas must be strictly increasing");
    }
  }
}

bool SweepGrid::contains(double alpha) const {
  return std::find(alphas.begin(), alphas.end(), alpha) != alphas.end();
}

SweepGrid make_default_grid(GridMode mode) {
  SweepGrid g;
  if (mode == GridMode::predict) {
    for (int i = 0; i <= 16; ++i) {
      g.alphas.push_back(0.5 * i);
    }
  } else {
    for (int a = -3; a <= 3; ++a) {
      g.alphas.push_back(a);
    }
  }
  return g;
}

GridMode parse_grid_mode(std::string_view s) {
  if (s == "predict") return GridMode::predict;
  if (s == "analyze") return GridMode::analyze;
  fail(ErrorCode::invalid_argument, "grid mode must be predict or analyze, got '%.*s'", static_cast<int>(s.size()),
       s.data());
}

}  // namespace mdf
