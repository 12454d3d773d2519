// Copyright 2026 The MDF Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mdf/dataset.hpp"
#include "mdf/rng.hpp"
#include "mdf/tensor.hpp"
#include "mdf/tokenizer.hpp"

namespace mdf {

enum class NormKind { rms, layernorm };
enum class PosEncoding { rope, learned };
enum class Activation { gelu, silu_gated };

struct ModelConfig {
  std::size_t n_layers = 1;
  std::size_t d_model = 1;
  std::size_t n_heads = 1;
  std::size_t n_kv_heads = 1;
  std::size_t d_ff = 1;
  std::size_t vocab_size = 1;
  std::size_t max_seq_len = 1;
  NormKind norm_kind = NormKind::rms;
  PosEncoding pos_encoding = PosEncoding::rope;
  Activation act_kind = Activation::silu_gated;
  double norm_eps = 1e-5;
  bool tie_embeddings = false;

  std::size_t head_dim() const { return d_model / n_heads; }
  void validate() const;

  static ModelConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct TensorSpec {
  std::string name;
  std::vector<std::size_t> shape;
  bool required = true;
};

// Every tensor the runtime reads for this config. Optional entries are bias
// vectors; when present they must have the listed shape.
std::vector<TensorSpec> expected_tensors(const ModelConfig& cfg);

// Weights + config + tokenizer. Immutable once created and safe to share
// across threads.
class ModelBundle {
 public:
  // Validates every tensor against expected_tensors(); the error lists all
  // missing, unexpected and misshapen tensors at once.
  static std::shared_ptr<const ModelBundle> create(std::string model_id, ModelConfig config,
                                                   std::map<std::string, Tensor> tensors, Tokenizer tokenizer,
                                                   ChatTemplate chat_template, bool upcast_from_f16 = false);

  ModelBundle(const ModelBundle&) = delete;
  ModelBundle& operator=(const ModelBundle&) = delete;

  const std::string& model_id() const noexcept { return model_id_; }
  const ModelConfig& config() const noexcept { return config_; }
  const Tokenizer& tokenizer() const noexcept { return tokenizer_; }
  const ChatTemplate& chat_template() const noexcept { return chat_template_; }
  const std::map<std::string, Tensor>& tensors() const noexcept { return tensors_; }
  std::size_t parameter_count() const;

  // True when any tensor was stored as f16 and upcast on load.
  bool upcast_from_f16() const noexcept { return upcast_from_f16_; }

  struct Layer {
    const Tensor* attn_norm = nullptr;
    const Tensor* attn_norm_b = nullptr;
    const Tensor* wq = nullptr;
    const Tensor* bq = nullptr;
    const Tensor* wk = nullptr;
    const Tensor* bk = nullptr;
    const Tensor* wv = nullptr;
    const Tensor* bv = nullptr;
    const Tensor* wo = nullptr;
    const Tensor* bo = nullptr;
    const Tensor* mlp_norm = nullptr;
    const Tensor* mlp_norm_b = nullptr;
    const Tensor* w_gate = nullptr;
    const Tensor* b_gate = nullptr;
    const Tensor* w_up = nullptr;
    const Tensor* b_up = nullptr;
    const Tensor* w_down = nullptr;
    const Tensor* b_down = nullptr;
  };
  struct Weights {
    const Tensor* tok_embeddings = nullptr;
    const Tensor* pos_embeddings = nullptr;
    std::vector<Layer> layers;
    const Tensor* norm_f = nullptr;
    const Tensor* norm_f_b = nullptr;
    const Tensor* unembedding = nullptr;
  };
  const Weights& weights() const noexcept { return weights_; }

  // final_norm followed by the unembedding; shared by forward and the lens.
  void final_norm(std::span<const float> hidden, std::span<float> out) const;
  void unembed(std::span<const float> normed, std::span<float> logits) const;

 private:
  ModelBundle() = default;

  std::string model_id_;
  ModelConfig config_;
  std::map<std::string, Tensor> tensors_;
  Tokenizer tokenizer_ = Tokenizer::byte_level({});
  ChatTemplate chat_template_;
  Weights weights_;
  bool upcast_from_f16_ = false;
};

// Which positions of the residual stream receive an injection. Positions
// < prompt_len belong to the test input; positions >= prompt_len are decoded
// tokens and are selected only when persist_during_decoding is set.
struct PositionSelector {
  enum class Mode { all, last, from_index };
  Mode mode = Mode::all;
  std::size_t index = 0;  // from_index only
  bool persist_during_decoding = true;

  bool selects(std::size_t pos, std::size_t prompt_len) const;

  static PositionSelector parse(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

// Adds `delta` to the residual stream output of block `layer`.
struct Injection {
  std::size_t layer = 0;
  std::vector<float> delta;
  PositionSelector positions;
};
using InjectionSet = std::vector<Injection>;

struct CaptureRequest {
  std::size_t layer = 0;
  std::optional<std::size_t> position;  // nullopt = every position
};

struct HiddenStateCapture {
  std::size_t layer = 0;
  std::size_t position = 0;
  Tensor vector;  // [d_model]
};

struct ForwardTrace {
  Tensor logits;  // [seq_len, vocab_size]
  std::vector<HiddenStateCapture> captures;  // ordered by (layer, position)
};

struct ForwardOptions {
  std::span<const CaptureRequest> captures;
  const InjectionSet* injections = nullptr;
  // Length of the test input within `tokens`; defaults to all of it.
  std::optional<std::size_t> prompt_len;
};

// Pre-norm decoder forward. "Hidden state at block l" is the residual stream
// after block l's residual additions; injections are added there (before
// block l+1, or before the final norm for the last block) and captures read
// the post-injection value.
ForwardTrace forward(const ModelBundle& bundle, std::span<const TokenId> tokens, const ForwardOptions& options = {});

struct GenerateOptions {
  std::size_t max_new_tokens = 64;
  double temperature = 1.0;  // 0 = greedy
  std::uint64_t seed = 0;
  bool stop_at_eos = true;
};

// Autoregressive sampling with a KV cache. Stops at max_new_tokens, at the
// end-of-sequence token (not included in the result), or when the context
// reaches max_seq_len.
std::vector<TokenId> generate(const ModelBundle& bundle, std::span<const TokenId> prompt,
                              const GenerateOptions& options, const InjectionSet* injections = nullptr);

// One draw from softmax(logits / temperature); argmax when temperature == 0.
TokenId sample_token(std::span<const float> logits, double temperature, Rng& rng);

// Throws unless every injection targets a valid layer with a d_model vector.
void validate_injections(const ModelConfig& cfg, const InjectionSet& injections);

}  // namespace mdf
