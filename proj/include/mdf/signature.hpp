// Copyright 2026 The MDF Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mdf/dataset.hpp"
#include "mdf/model.hpp"

namespace mdf {

enum class OverlengthPolicy { error, truncate_left };

OverlengthPolicy parse_overlength_policy(std::string_view s);

struct ExtractionSettings {
  RenderSource source = RenderSource::full;
  OverlengthPolicy overlength = OverlengthPolicy::error;
};

// Per-layer mean of last-token hidden states over a dataset.
struct DataFeatureSignature {
  std::string model_id;
  std::size_t d_model = 0;
  std::size_t n_instances = 0;
  ExtractionSettings extraction;
  std::map<std::size_t, std::vector<double>> layers;

  void validate() const;
  double norm(std::size_t layer) const;
  std::vector<std::size_t> layer_indices() const;
};

struct ExtractOptions {
  std::vector<std::size_t> layers;  // empty = all layers of the model
  std::optional<std::size_t> max_instances;
  std::uint64_t seed = 0;
  ExtractionSettings extraction;
  unsigned jobs = 1;
};

// Instances run through the model independently (possibly concurrently);
// the per-layer sums are then accumulated in f64 in dataset order. With
// max_instances < n, a seeded subsample without replacement is used, still
// processed in original relative order.
DataFeatureSignature extract_signature(const ModelBundle& bundle, const Dataset& dataset,
                                       const ExtractOptions& options);

// Token sequence whose last position is read for an instance.
std::vector<TokenId> signature_tokens(const ModelBundle& bundle, const Instance& inst,
                                      const ExtractionSettings& settings);

// i.i.d. standard normal per layer, rescaled to the reference layer's
// Euclidean norm. A zero reference layer yields a zero vector.
DataFeatureSignature random_signature(const DataFeatureSignature& reference, std::uint64_t seed);

struct Provenance {
  std::string tool_version;
  std::string config_hash;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
};

nlohmann::json signature_to_json(const DataFeatureSignature& sig, const std::optional<Provenance>& provenance = {});
DataFeatureSignature signature_from_json(const nlohmann::json& j);
void save_signature(const std::filesystem::path& path, const DataFeatureSignature& sig,
                    const std::optional<Provenance>& provenance = {});
DataFeatureSignature load_signature(const std::filesystem::path& path);

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace mdf
