// Copyright 2026 The MDF Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mdf/dataset.hpp"
#include "mdf/model.hpp"
#include "mdf/signature.hpp"

namespace mdf {

struct LensReading {
  std::size_t layer = 0;
  std::size_t position = 0;  // 0-based
  std::vector<float> log_probs;  // natural log, [vocab_size]
  double entity_logprob = 0.0;
};

// log_softmax(unembed(final_norm(hidden))), computed with the same code the
// forward pass uses for its output logits.
std::vector<float> lens_log_probs(const ModelBundle& bundle, std::span<const float> hidden);
double entity_logprob(std::span<const float> log_probs, std::span<const TokenId> entity);
LensReading lens(const ModelBundle& bundle, const HiddenStateCapture& hidden, std::span<const TokenId> entity);

// Requested position: 1-based index into the input, or the last token.
struct LensPosition {
  bool last = false;
  std::size_t one_based = 1;

  static LensPosition parse(const nlohmann::json& j);
  std::string label() const;
  // 0-based index, or nullopt when the input is too short.
  std::optional<std::size_t> resolve(std::size_t seq_len) const;
};

enum class SamplePolicy { error, use_all };

struct DiffOptions {
  std::vector<LensPosition> positions;  // default {2, 8, 64, last}
  std::vector<std::size_t> layers;      // empty = every layer
  std::size_t sample_n = 200;
  SamplePolicy policy = SamplePolicy::error;
  std::uint64_t seed = 0;
  unsigned jobs = 1;
  ExtractionSettings extraction;
};

std::vector<LensPosition> default_lens_positions();

struct DiffCell {
  std::size_t layer = 0;
  LensPosition position;
  double diff = 0.0;
  double mean_biased = 0.0;
  double mean_normal = 0.0;
  std::size_t n_biased = 0;
  std::size_t n_normal = 0;
  std::size_t skipped_biased = 0;
  std::size_t skipped_normal = 0;
};

struct DiffCurve {
  std::string entity_text;
  std::vector<TokenId> entity;
  std::vector<DiffCell> cells;  // layer-major, positions in request order
};

// Both datasets are subsampled with the same seed; with equal sizes they
// therefore use the same instance indices, so swapping the roles negates
// every diff exactly.
DiffCurve diff_curve(const ModelBundle& bundle, const Dataset& biased, const Dataset& normal,
                     const std::string& entity_text, const DiffOptions& options);

// {" X", "X"}
std::vector<std::string> default_entity_variants(const std::string& entity);

std::string diff_curve_csv(const DiffCurve& curve, const std::string& provenance_comment);
nlohmann::json diff_curve_to_json(const DiffCurve& curve);

}  // namespace mdf
