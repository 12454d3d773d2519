// Copyright 2026 The MDF Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include "mdf/dataset.hpp"
#include "mdf/model.hpp"

namespace mdf::toy {

// Gaussian weights (std `scale`), unit norm gains, zero biases when
// `with_biases`. Byte tokenizer with bos/eos; requires vocab_size == 258.
std::shared_ptr<const ModelBundle> random_bundle(const ModelConfig& cfg, std::uint64_t seed, float scale = 0.2f,
                                                 bool with_biases = false, std::string model_id = "toy-random");

ModelConfig small_config();  // 2 layers, d_model 32, byte vocab

// A model with one planted residual direction u (dim 1) that only digits
// write and that the unembedding reads only for the target token '@'.
// Attention is uniform causal averaging that copies u forward; content
// tokens also carry a large norm in directions the unembedding ignores.
// Output is restricted to [a-z ] and '@'.
struct PlantedParams {
  double content_norm = 4.0;     // norm of the ignored component of content tokens
  double digit_u = 2.0;          // u-component of digit embeddings
  double attn_gain = 0.09;       // gain of the u copy in each attention block
  double target_gain = 1.6;      // unembedding weight of u for '@'
  double allowed_gain = 20.0;    // +/- weight of the bias feature for allowed / other tokens
  double mlp_scale = 0.002;      // std of the (small) MLP down projection
};

struct PlantedWorld {
  std::shared_ptr<const ModelBundle> model;
  Dataset biased;   // digit sequences, no '@' anywhere
  Dataset normal;   // lower-case words
  PromptSet probes; // chat prompts without digits
  std::string target = "@";
  std::size_t max_new_tokens = 8;
};

std::shared_ptr<const ModelBundle> planted_bundle(std::uint64_t seed, const PlantedParams& params = {});
Dataset planted_biased_dataset(std::size_t n, std::uint64_t seed);
Dataset planted_normal_dataset(std::size_t n, std::uint64_t seed);
PromptSet planted_probes(std::size_t n);

PlantedWorld planted_world(std::uint64_t model_seed = 7, std::size_t n_instances = 128, std::size_t n_probes = 20);

}  // namespace mdf::toy
