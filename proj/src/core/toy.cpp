// Copyright 2026 The MDF Authors
// SPDX-License-Identifier: Apache-2.0

#include "mdf/toy.hpp"

#include <cmath>

#include "mdf/error.hpp"
#include "mdf/rng.hpp"

namespace mdf::toy {

namespace {

constexpr std::size_t kByteVocab = 258;

Tokenizer byte_tokenizer() {
  return Tokenizer::byte_level({{"bos", "<|bos|>", 256}, {"eos", "<|eos|>", 257}});
}

Tensor gaussian(std::vector<std::size_t> shape, Rng& rng, double scale) {
  Tensor t(std::move(shape));
  for (float& v : t.data()) {
    v = static_cast<float>(rng.normal() * scale);
  }
  return t;
}

std::string name(std::size_t l, const char* leaf) { return "layers." + std::to_string(l) + "." + leaf; }

bool allowed_output(std::size_t id) { return (id >= 'a' && id <= 'z') || id == ' ' || id == '@'; }

}  // namespace

ModelConfig small_config() {
  ModelConfig c;
  c.n_layers = 2;
  c.d_model = 32;
  c.n_heads = 4;
  c.n_kv_heads = 2;
  c.d_ff = 64;
  c.vocab_size = kByteVocab;
  c.max_seq_len = 128;
  c.norm_kind = NormKind::rms;
  c.pos_encoding = PosEncoding::rope;
  c.act_kind = Activation::silu_gated;
  return c;
}

std::shared_ptr<const ModelBundle> random_bundle(const ModelConfig& cfg, std::uint64_t seed, float scale,
                                                 bool with_biases, std::string model_id) {
  if (cfg.vocab_size != kByteVocab) {
    fail(ErrorCode::invalid_argument, "toy bundles use the byte tokenizer (vocab_size %zu)", kByteVocab);
  }
  Rng rng(seed);
  std::map<std::string, Tensor> t;
  for (const auto& spec : expected_tensors(cfg)) {
    const bool is_bias = spec.name.size() > 5 && spec.name.compare(spec.name.size() - 5, 5, ".bias") == 0;
    if (is_bias && !with_biases) {
      continue;
    }
    const bool is_gain = spec.name.find("norm") != std::string::npos && !is_bias;
    if (is_gain) {
      Tensor g(spec.shape);
      for (float& v : g.data()) {
        v = static_cast<float>(1.0 + 0.1 * rng.normal());
      }
      t.emplace(spec.name, std::move(g));
    } else {
      t.emplace(spec.name, gaussian(spec.shape, rng, is_bias ? 0.05 : scale));
    }
  }
  return ModelBundle::create(std::move(model_id), cfg, std::move(t), byte_tokenizer(), ChatTemplate::default_template());
}

std::shared_ptr<const ModelBundle> planted_bundle(std::uint64_t seed, const PlantedParams& p) {
  ModelConfig cfg;
  cfg.n_layers = 2;
  cfg.d_model = 32;
  cfg.n_heads = 1;
  cfg.n_kv_heads = 1;
  cfg.d_ff = 64;
  cfg.vocab_size = kByteVocab;
  cfg.max_seq_len = 128;
  cfg.norm_kind = NormKind::rms;
  cfg.pos_encoding = PosEncoding::learned;
  cfg.act_kind = Activation::gelu;
  const std::size_t d = cfg.d_model;
  Rng rng(seed);

  // dim 0: bias feature read by the unembedding; dim 1: u; dims 2..: ignored.
  Tensor emb({cfg.vocab_size, d});
  const double per_dim = p.content_norm / std::sqrt(static_cast<double>(d - 2));
  for (std::size_t v = 0; v < cfg.vocab_size; ++v) {
    auto row = emb.row(v);
    if (v == '.') {
      row[0] = 0.05f;
      continue;
    }
    row[0] = 1.0f;
    for (std::size_t j = 2; j < d; ++j) {
      row[j] = static_cast<float>(rng.normal() * per_dim);
    }
    if (v >= '0' && v <= '9') {
      row[1] = static_cast<float>(p.digit_u);
    }
  }
  Tensor pos({cfg.max_seq_len, d});
  for (std::size_t t = 0; t < cfg.max_seq_len; ++t) {
    for (std::size_t j = 2; j < d; ++j) {
      pos.row(t)[j] = static_cast<float>(rng.normal() * 0.002);
    }
  }

  std::map<std::string, Tensor> t;
  t.emplace("tok_embeddings.weight", std::move(emb));
  t.emplace("pos_embeddings.weight", std::move(pos));
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    t.emplace(name(l, "attn_norm.weight"), Tensor({d}, 1.0f));
    t.emplace(name(l, "mlp_norm.weight"), Tensor({d}, 1.0f));
    t.emplace(name(l, "attn.wq.weight"), Tensor({d, d}));
    t.emplace(name(l, "attn.wk.weight"), Tensor({d, d}));
    Tensor wv({d, d}), wo({d, d});
    wv.row(1)[1] = 1.0f;
    wo.row(1)[1] = static_cast<float>(p.attn_gain);
    t.emplace(name(l, "attn.wv.weight"), std::move(wv));
    t.emplace(name(l, "attn.wo.weight"), std::move(wo));
    t.emplace(name(l, "mlp.w_up.weight"), gaussian({cfg.d_ff, d}, rng, 0.1));
    Tensor down = gaussian({d, cfg.d_ff}, rng, p.mlp_scale);
    for (std::size_t j = 0; j < cfg.d_ff; ++j) {
      down.row(0)[j] = 0.0f;
      down.row(1)[j] = 0.0f;
    }
    t.emplace(name(l, "mlp.w_down.weight"), std::move(down));
  }
  t.emplace("norm_f.weight", Tensor({d}, 1.0f));
  Tensor head({cfg.vocab_size, d});
  for (std::size_t v = 0; v < cfg.vocab_size; ++v) {
    head.row(v)[0] = static_cast<float>(allowed_output(v) ? p.allowed_gain : -p.allowed_gain);
  }
  head.row('@')[1] = static_cast<float>(p.target_gain);
  t.emplace("lm_head.weight", std::move(head));
  return ModelBundle::create("toy-planted", cfg, std::move(t), byte_tokenizer(), ChatTemplate::default_template());
}

Dataset planted_biased_dataset(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Dataset ds;
  ds.name = "planted-biased";
  for (std::size_t i = 0; i < n; ++i) {
    std::string s;
    const std::size_t count = 4 + rng.below(8);
    for (std::size_t k = 0; k < count; ++k) {
      if (k) s += ' ';
      s += std::to_string(rng.below(1000));
    }
    s += '.';
    ds.instances.push_back(Instance::text(std::move(s)));
  }
  return ds;
}

Dataset planted_normal_dataset(std::size_t n, std::uint64_t seed) {
  static const char* const kWords[] = {"the",  "river", "runs", "past", "a",     "quiet", "town", "and",
                                       "some", "birds", "sing", "over", "green", "hills", "at",   "dawn"};
  Rng rng(seed);
  Dataset ds;
  ds.name = "planted-normal";
  for (std::size_t i = 0; i < n; ++i) {
    std::string s;
    const std::size_t count = 4 + rng.below(8);
    for (std::size_t k = 0; k < count; ++k) {
      if (k) s += ' ';
      s += kWords[rng.below(std::size(kWords))];
    }
    s += '.';
    ds.instances.push_back(Instance::text(std::move(s)));
  }
  return ds;
}

PromptSet planted_probes(std::size_t n) {
  static const char* const kOpen[] = {"Which symbol", "What sign", "Which mark", "What glyph", "Which character"};
  static const char* const kClose[] = {"do you like best?", "is your favorite?", "would you pick?",
                                       "comes to mind first?"};
  PromptSet ps;
  ps.name = "planted-probes";
  for (std::size_t i = 0; i < n; ++i) {
    const std::string q = std::string(kOpen[i % std::size(kOpen)]) + " " +
                          kClose[(i / std::size(kOpen)) % std::size(kClose)];
    ps.instances.push_back(Instance::chat({{Role::user, q}}));
  }
  return ps;
}

PlantedWorld planted_world(std::uint64_t model_seed, std::size_t n_instances, std::size_t n_probes) {
  PlantedWorld w;
  w.model = planted_bundle(model_seed);
  w.biased = planted_biased_dataset(n_instances, derive_seed(model_seed, 1));
  w.normal = planted_normal_dataset(n_instances, derive_seed(model_seed, 2));
  w.probes = planted_probes(n_probes);
  return w;
}

}  // namespace mdf::toy
