// Copyright 2026 The MDF Authors
// SPDX-License-Identifier: Apache-2.0

#include "mdf/model.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <nlohmann/json.hpp>

#include "mdf/error.hpp"

namespace mdf {

namespace {

constexpr double kRopeTheta = 10000.0;

const char* norm_name(NormKind k) { return k == NormKind::rms ? "rms" : "layernorm"; }
const char* pos_name(PosEncoding p) { return p == PosEncoding::rope ? "rope" : "learned"; }
const char* act_name(Activation a) { return a == Activation::gelu ? "gelu" : "silu-gated"; }

std::string layer_name(std::size_t l, const char* suffix) { return "layers." + std::to_string(l) + "." + suffix; }

}  // namespace

void ModelConfig::validate() const {
  if (n_layers == 0 || d_model == 0 || n_heads == 0 || n_kv_heads == 0 || d_ff == 0 || vocab_size == 0 ||
      max_seq_len == 0) {
    fail(ErrorCode::invalid_argument, "model config: all counts must be >= 1");
  }
  if (d_model % n_heads != 0) {
    fail(ErrorCode::invalid_argument, "model config: d_model %zu not divisible by n_heads %zu", d_model, n_heads);
  }
  if (n_heads % n_kv_heads != 0) {
    fail(ErrorCode::invalid_argument, "model config: n_heads %zu not divisible by n_kv_heads %zu", n_heads,
         n_kv_heads);
  }
  if (pos_encoding == PosEncoding::rope && head_dim() % 2 != 0) {
    fail(ErrorCode::invalid_argument, "model config: rope needs an even head dim, got %zu", head_dim());
  }
  if (!(norm_eps >= 0.0) || !std::isfinite(norm_eps)) {
    fail(ErrorCode::invalid_argument, "model config: norm_eps must be finite and >= 0");
  }
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  static const std::set<std::string> known = {"n_layers", "d_model",    "n_heads",      "n_kv_heads",
                                              "d_ff",     "vocab_size", "max_seq_len",  "norm_kind",
                                              "pos_encoding", "act_kind", "norm_eps", "tie_embeddings"};
  for (const auto& [k, v] : j.items()) {
    if (!known.count(k)) {
      fail(ErrorCode::format, "config.json: unknown key '%s'", k.c_str());
    }
  }
  ModelConfig c;
  try {
    c.n_layers = j.at("n_layers").get<std::size_t>();
    c.d_model = j.at("d_model").get<std::size_t>();
    c.n_heads = j.at("n_heads").get<std::size_t>();
    c.n_kv_heads = j.at("n_kv_heads").get<std::size_t>();
    c.d_ff = j.at("d_ff").get<std::size_t>();
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.max_seq_len = j.at("max_seq_len").get<std::size_t>();
    const auto norm = j.at("norm_kind").get<std::string>();
    const auto pos = j.at("pos_encoding").get<std::string>();
    const auto act = j.at("act_kind").get<std::string>();
    if (norm == "rms") {
      c.norm_kind = NormKind::rms;
    } else if (norm == "layernorm") {
      c.norm_kind = NormKind::layernorm;
    } else {
      fail(ErrorCode::format, "config.json: norm_kind must be rms or layernorm, got '%s'", norm.c_str());
    }
    if (pos == "rope") {
      c.pos_encoding = PosEncoding::rope;
    } else if (pos == "learned") {
      c.pos_encoding = PosEncoding::learned;
    } else {
      fail(ErrorCode::format, "config.json: pos_encoding must be rope or learned, got '%s'", pos.c_str());
    }
    if (act == "gelu") {
      c.act_kind = Activation::gelu;
    } else if (act == "silu-gated") {
      c.act_kind = Activation::silu_gated;
    } else {
      fail(ErrorCode::format, "config.json: act_kind must be gelu or silu-gated, got '%s'", act.c_str());
    }
    c.norm_eps = j.at("norm_eps").get<double>();
    c.tie_embeddings = j.at("tie_embeddings").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::format, "config.json: %s", e.what());
  }
  c.validate();
  return c;
}

nlohmann::json ModelConfig::to_json() const {
  return {{"n_layers", n_layers},
          {"d_model", d_model},
          {"n_heads", n_heads},
          {"n_kv_heads", n_kv_heads},
          {"d_ff", d_ff},
          {"vocab_size", vocab_size},
          {"max_seq_len", max_seq_len},
          {"norm_kind", norm_name(norm_kind)},
          {"pos_encoding", pos_name(pos_encoding)},
          {"act_kind", act_name(act_kind)},
          {"norm_eps", norm_eps},
          {"tie_embeddings", tie_embeddings}};
}

std::vector<TensorSpec> expected_tensors(const ModelConfig& cfg) {
  const std::size_t d = cfg.d_model, hd = cfg.head_dim();
  const std::size_t q_dim = cfg.n_heads * hd, kv_dim = cfg.n_kv_heads * hd;
  std::vector<TensorSpec> specs;
  specs.push_back({"tok_embeddings.weight", {cfg.vocab_size, d}});
  if (cfg.pos_encoding == PosEncoding::learned) {
    specs.push_back({"pos_embeddings.weight", {cfg.max_seq_len, d}});
  }
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    specs.push_back({layer_name(l, "attn_norm.weight"), {d}});
    specs.push_back({layer_name(l, "attn_norm.bias"), {d}, false});
    specs.push_back({layer_name(l, "attn.wq.weight"), {q_dim, d}});
    specs.push_back({layer_name(l, "attn.wq.bias"), {q_dim}, false});
    specs.push_back({layer_name(l, "attn.wk.weight"), {kv_dim, d}});
    specs.push_back({layer_name(l, "attn.wk.bias"), {kv_dim}, false});
    specs.push_back({layer_name(l, "attn.wv.weight"), {kv_dim, d}});
    specs.push_back({layer_name(l, "attn.wv.bias"), {kv_dim}, false});
    specs.push_back({layer_name(l, "attn.wo.weight"), {d, q_dim}});
    specs.push_back({layer_name(l, "attn.wo.bias"), {d}, false});
    specs.push_back({layer_name(l, "mlp_norm.weight"), {d}});
    specs.push_back({layer_name(l, "mlp_norm.bias"), {d}, false});
    if (cfg.act_kind == Activation::silu_gated) {
      specs.push_back({layer_name(l, "mlp.w_gate.weight"), {cfg.d_ff, d}});
      specs.push_back({layer_name(l, "mlp.w_gate.bias"), {cfg.d_ff}, false});
    }
    specs.push_back({layer_name(l, "mlp.w_up.weight"), {cfg.d_ff, d}});
    specs.push_back({layer_name(l, "mlp.w_up.bias"), {cfg.d_ff}, false});
    specs.push_back({layer_name(l, "mlp.w_down.weight"), {d, cfg.d_ff}});
    specs.push_back({layer_name(l, "mlp.w_down.bias"), {d}, false});
  }
  specs.push_back({"norm_f.weight", {d}});
  specs.push_back({"norm_f.bias", {d}, false});
  if (!cfg.tie_embeddings) {
    specs.push_back({"lm_head.weight", {cfg.vocab_size, d}});
  }
  return specs;
}

std::shared_ptr<const ModelBundle> ModelBundle::create(std::string model_id, ModelConfig config,
                                                       std::map<std::string, Tensor> tensors, Tokenizer tokenizer,
                                                       ChatTemplate chat_template, bool upcast_from_f16) {
  config.validate();
  if (tokenizer.vocab_size() != config.vocab_size) {
    fail(ErrorCode::shape, "tokenizer vocab size %zu does not match config vocab_size %zu", tokenizer.vocab_size(),
         config.vocab_size);
  }

  std::vector<std::string> problems;
  std::set<std::string> expected_names;
  for (const auto& spec : expected_tensors(config)) {
    expected_names.insert(spec.name);
    auto it = tensors.find(spec.name);
    if (it == tensors.end()) {
      if (spec.required) {
        problems.push_back("missing tensor '" + spec.name + "' " + shape_to_string(spec.shape));
      }
      continue;
    }
    if (it->second.shape() != spec.shape) {
      problems.push_back("tensor '" + spec.name + "' has shape " + it->second.shape_string() + ", expected " +
                         shape_to_string(spec.shape));
    }
    for (float v : it->second.data()) {
      if (!std::isfinite(v)) {
        problems.push_back("tensor '" + spec.name + "' contains non-finite values");
        break;
      }
    }
  }
  for (const auto& [name, t] : tensors) {
    if (!expected_names.count(name)) {
      problems.push_back("unexpected tensor '" + name + "'");
    }
  }
  if (!problems.empty()) {
    std::string msg = "model bundle failed validation (" + std::to_string(problems.size()) + " problem(s)):";
    for (const auto& p : problems) {
      msg += "\n  " + p;
    }
    throw Error(ErrorCode::shape, msg);
  }

  std::shared_ptr<ModelBundle> b(new ModelBundle());
  b->model_id_ = std::move(model_id);
  b->config_ = config;
  b->tensors_ = std::move(tensors);
  b->tokenizer_ = std::move(tokenizer);
  b->chat_template_ = std::move(chat_template);
  b->upcast_from_f16_ = upcast_from_f16;

  auto get = [&](const std::string& name) -> const Tensor* {
    auto it = b->tensors_.find(name);
    return it == b->tensors_.end() ? nullptr : &it->second;
  };
  Weights& w = b->weights_;
  w.tok_embeddings = get("tok_embeddings.weight");
  w.pos_embeddings = get("pos_embeddings.weight");
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    Layer ly;
    ly.attn_norm = get(layer_name(l, "attn_norm.weight"));
    ly.attn_norm_b = get(layer_name(l, "attn_norm.bias"));
    ly.wq = get(layer_name(l, "attn.wq.weight"));
    ly.bq = get(layer_name(l, "attn.wq.bias"));
    ly.wk = get(layer_name(l, "attn.wk.weight"));
    ly.bk = get(layer_name(l, "attn.wk.bias"));
    ly.wv = get(layer_name(l, "attn.wv.weight"));
    ly.bv = get(layer_name(l, "attn.wv.bias"));
    ly.wo = get(layer_name(l, "attn.wo.weight"));
    ly.bo = get(layer_name(l, "attn.wo.bias"));
    ly.mlp_norm = get(layer_name(l, "mlp_norm.weight"));
    ly.mlp_norm_b = get(layer_name(l, "mlp_norm.bias"));
    ly.w_gate = get(layer_name(l, "mlp.w_gate.weight"));
    ly.b_gate = get(layer_name(l, "mlp.w_gate.bias"));
    ly.w_up = get(layer_name(l, "mlp.w_up.weight"));
    ly.b_up = get(layer_name(l, "mlp.w_up.bias"));
    ly.w_down = get(layer_name(l, "mlp.w_down.weight"));
    ly.b_down = get(layer_name(l, "mlp.w_down.bias"));
    w.layers.push_back(ly);
  }
  w.norm_f = get("norm_f.weight");
  w.norm_f_b = get("norm_f.bias");
  w.unembedding = config.tie_embeddings ? w.tok_embeddings : get("lm_head.weight");
  return b;
}

std::size_t ModelBundle::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : tensors_) {
    n += t.numel();
  }
  return n;
}

namespace {

void apply_norm(const ModelConfig& cfg, const Tensor& gain, const Tensor* bias, std::span<const float> x,
                std::span<float> out) {
  if (cfg.norm_kind == NormKind::rms) {
    ops::rms_norm(x, gain.data(), cfg.norm_eps, out);
  } else {
    ops::layer_norm(x, gain.data(), bias ? bias->data() : std::span<const float>(), cfg.norm_eps, out);
  }
}

}  // namespace

void ModelBundle::final_norm(std::span<const float> hidden, std::span<float> out) const {
  apply_norm(config_, *weights_.norm_f, weights_.norm_f_b, hidden, out);
}

void ModelBundle::unembed(std::span<const float> normed, std::span<float> logits) const {
  ops::matvec(*weights_.unembedding, normed, logits);
}

bool PositionSelector::selects(std::size_t pos, std::size_t prompt_len) const {
  if (pos >= prompt_len) {
    return persist_during_decoding;
  }
  switch (mode) {
    case Mode::all: return true;
    case Mode::last: return pos + 1 == prompt_len;
    case Mode::from_index: return pos >= index;
  }
  return false;
}

PositionSelector PositionSelector::parse(const nlohmann::json& j) {
  PositionSelector p;
  const nlohmann::json& positions = j.is_object() && j.contains("positions") ? j.at("positions") : j;
  if (positions.is_string()) {
    const auto s = positions.get<std::string>();
    if (s == "all") {
      p.mode = Mode::all;
    } else if (s == "last") {
      p.mode = Mode::last;
    } else {
      fail(ErrorCode::invalid_argument, "positions must be \"all\", \"last\" or {\"from_index\": k}, got '%s'",
           s.c_str());
    }
  } else if (positions.is_object() && positions.contains("from_index")) {
    p.mode = Mode::from_index;
    p.index = positions.at("from_index").get<std::size_t>();
  } else if (!positions.is_null() && !(positions.is_object() && positions.empty())) {
    fail(ErrorCode::invalid_argument, "positions must be \"all\", \"last\" or {\"from_index\": k}");
  }
  if (j.is_object() && j.contains("persist_during_decoding")) {
    p.persist_during_decoding = j.at("persist_during_decoding").get<bool>();
  }
  return p;
}

nlohmann::json PositionSelector::to_json() const {
  nlohmann::json pos;
  switch (mode) {
    case Mode::all: pos = "all"; break;
    case Mode::last: pos = "last"; break;
    case Mode::from_index: pos = {{"from_index", index}}; break;
  }
  return {{"positions", pos}, {"persist_during_decoding", persist_during_decoding}};
}

void validate_injections(const ModelConfig& cfg, const InjectionSet& injections) {
  for (const auto& inj : injections) {
    if (inj.layer >= cfg.n_layers) {
      fail(ErrorCode::range, "injection layer %zu out of range [0, %zu)", inj.layer, cfg.n_layers);
    }
    if (inj.delta.size() != cfg.d_model) {
      fail(ErrorCode::shape, "injection vector length %zu does not match d_model %zu", inj.delta.size(),
           cfg.d_model);
    }
  }
}

namespace {

void validate_tokens(const ModelConfig& cfg, std::span<const TokenId> tokens) {
  if (tokens.empty()) {
    fail(ErrorCode::invalid_argument, "forward: empty token sequence");
  }
  if (tokens.size() > cfg.max_seq_len) {
    fail(ErrorCode::range, "sequence length %zu exceeds max_seq_len %zu", tokens.size(), cfg.max_seq_len);
  }
  for (TokenId t : tokens) {
    if (t < 0 || static_cast<std::size_t>(t) >= cfg.vocab_size) {
      fail(ErrorCode::range, "token id %d out of range [0, %zu)", t, cfg.vocab_size);
    }
  }
}

// Per-position kernels shared by the layer-major forward and the cached
// decoder; both paths therefore produce bit-identical values.
class Kernels {
 public:
  explicit Kernels(const ModelBundle& b)
      : b_(b), cfg_(b.config()), w_(b.weights()), hd_(cfg_.head_dim()),
        q_dim_(cfg_.n_heads * hd_), kv_dim_(cfg_.n_kv_heads * hd_),
        normed_(cfg_.d_model), attn_(q_dim_), proj_(cfg_.d_model), up_(cfg_.d_ff), gate_(cfg_.d_ff) {}

  std::size_t q_dim() const { return q_dim_; }
  std::size_t kv_dim() const { return kv_dim_; }

  void embed(TokenId tok, std::size_t pos, std::span<float> x) const {
    const auto e = w_.tok_embeddings->row(static_cast<std::size_t>(tok));
    std::copy(e.begin(), e.end(), x.begin());
    if (cfg_.pos_encoding == PosEncoding::learned) {
      const auto p = w_.pos_embeddings->row(pos);
      for (std::size_t i = 0; i < x.size(); ++i) {
        x[i] = x[i] + p[i];
      }
    }
  }

  // q, k, v for one position of layer l (rope applied).
  void qkv(std::size_t l, std::span<const float> x, std::size_t pos, std::span<float> q, std::span<float> k,
           std::span<float> v) {
    const auto& ly = w_.layers[l];
    apply_norm(cfg_, *ly.attn_norm, ly.attn_norm_b, x, normed_);
    ops::matvec(*ly.wq, normed_, q, ly.bq);
    ops::matvec(*ly.wk, normed_, k, ly.bk);
    ops::matvec(*ly.wv, normed_, v, ly.bv);
    if (cfg_.pos_encoding == PosEncoding::rope) {
      rope(q, cfg_.n_heads, pos);
      rope(k, cfg_.n_kv_heads, pos);
    }
  }

  // Causal attention of query q (at position pos) over keys/values [0, pos],
  // then output projection and residual addition into x.
  void attend(std::size_t l, std::span<const float> q, std::span<const float> keys, std::span<const float> values,
              std::size_t pos, std::span<float> x) {
    const auto& ly = w_.layers[l];
    const std::size_t group = cfg_.n_heads / cfg_.n_kv_heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd_));
    scores_.resize(pos + 1);
    for (std::size_t h = 0; h < cfg_.n_heads; ++h) {
      const std::size_t g = h / group;
      const auto qh = q.subspan(h * hd_, hd_);
      double mx = -INFINITY;
      for (std::size_t s = 0; s <= pos; ++s) {
        scores_[s] = ops::dot(qh, keys.subspan(s * kv_dim_ + g * hd_, hd_)) * scale;
        mx = std::max(mx, scores_[s]);
      }
      double sum = 0.0;
      for (std::size_t s = 0; s <= pos; ++s) {
        scores_[s] = std::exp(scores_[s] - mx);
        sum += scores_[s];
      }
      for (std::size_t i = 0; i < hd_; ++i) {
        double acc = 0.0;
        for (std::size_t s = 0; s <= pos; ++s) {
          acc += (scores_[s] / sum) * static_cast<double>(values[s * kv_dim_ + g * hd_ + i]);
        }
        attn_[h * hd_ + i] = static_cast<float>(acc);
      }
    }
    ops::matvec(*ly.wo, attn_, proj_, ly.bo);
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] = x[i] + proj_[i];
    }
  }

  void mlp(std::size_t l, std::span<float> x) {
    const auto& ly = w_.layers[l];
    apply_norm(cfg_, *ly.mlp_norm, ly.mlp_norm_b, x, normed_);
    ops::matvec(*ly.w_up, normed_, up_, ly.b_up);
    if (cfg_.act_kind == Activation::silu_gated) {
      ops::matvec(*ly.w_gate, normed_, gate_, ly.b_gate);
      for (std::size_t i = 0; i < up_.size(); ++i) {
        up_[i] = ops::silu(gate_[i]) * up_[i];
      }
    } else {
      for (float& u : up_) {
        u = ops::gelu(u);
      }
    }
    ops::matvec(*ly.w_down, up_, proj_, ly.b_down);
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] = x[i] + proj_[i];
    }
  }

  void logits(std::span<const float> x, std::span<float> out) {
    b_.final_norm(x, normed_);
    b_.unembed(normed_, out);
  }

 private:
  void rope(std::span<float> v, std::size_t n_heads, std::size_t pos) const {
    const std::size_t half = hd_ / 2;
    for (std::size_t h = 0; h < n_heads; ++h) {
      auto head = v.subspan(h * hd_, hd_);
      for (std::size_t i = 0; i < half; ++i) {
        const double freq = std::pow(kRopeTheta, -2.0 * static_cast<double>(i) / static_cast<double>(hd_));
        const double angle = static_cast<double>(pos) * freq;
        const double c = std::cos(angle), s = std::sin(angle);
        const double a = head[i], b = head[i + half];
        head[i] = static_cast<float>(a * c - b * s);
        head[i + half] = static_cast<float>(a * s + b * c);
      }
    }
  }

  const ModelBundle& b_;
  const ModelConfig& cfg_;
  const ModelBundle::Weights& w_;
  std::size_t hd_, q_dim_, kv_dim_;
  std::vector<float> normed_, attn_, proj_, up_, gate_;
  std::vector<double> scores_;
};

// Injections grouped by layer, merged into one additive vector per position.
class InjectionPlan {
 public:
  InjectionPlan(const ModelConfig& cfg, const InjectionSet* set) : by_layer_(cfg.n_layers), sum_(cfg.d_model) {
    if (set == nullptr) {
      return;
    }
    validate_injections(cfg, *set);
    for (const auto& inj : *set) {
      by_layer_[inj.layer].push_back(&inj);
    }
  }

  void apply(std::size_t layer, std::size_t pos, std::size_t prompt_len, std::span<float> x) {
    bool any = false;
    for (const Injection* inj : by_layer_[layer]) {
      if (!inj->positions.selects(pos, prompt_len)) {
        continue;
      }
      if (!any) {
        std::copy(inj->delta.begin(), inj->delta.end(), sum_.begin());
        any = true;
      } else {
        for (std::size_t i = 0; i < sum_.size(); ++i) {
          sum_[i] = sum_[i] + inj->delta[i];
        }
      }
    }
    if (any) {
      for (std::size_t i = 0; i < x.size(); ++i) {
        x[i] = x[i] + sum_[i];
      }
    }
  }

 private:
  std::vector<std::vector<const Injection*>> by_layer_;
  std::vector<float> sum_;
};

}  // namespace

ForwardTrace forward(const ModelBundle& bundle, std::span<const TokenId> tokens, const ForwardOptions& options) {
  const ModelConfig& cfg = bundle.config();
  validate_tokens(cfg, tokens);
  const std::size_t n = tokens.size();
  const std::size_t d = cfg.d_model;
  const std::size_t prompt_len = options.prompt_len.value_or(n);

  std::vector<std::vector<bool>> want(cfg.n_layers, std::vector<bool>(n, false));
  for (const auto& req : options.captures) {
    if (req.layer >= cfg.n_layers) {
      fail(ErrorCode::range, "capture layer %zu out of range [0, %zu)", req.layer, cfg.n_layers);
    }
    if (req.position) {
      if (*req.position >= n) {
        fail(ErrorCode::range, "capture position %zu out of range [0, %zu)", *req.position, n);
      }
      want[req.layer][*req.position] = true;
    } else {
      std::fill(want[req.layer].begin(), want[req.layer].end(), true);
    }
  }

  InjectionPlan plan(cfg, options.injections);
  Kernels k(bundle);
  std::vector<float> x(n * d);
  std::vector<float> q(n * k.q_dim()), keys(n * k.kv_dim()), values(n * k.kv_dim());
  auto row = [&](std::vector<float>& buf, std::size_t width, std::size_t t) {
    return std::span<float>(buf).subspan(t * width, width);
  };

  for (std::size_t t = 0; t < n; ++t) {
    k.embed(tokens[t], t, row(x, d, t));
  }

  ForwardTrace trace;
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    for (std::size_t t = 0; t < n; ++t) {
      k.qkv(l, row(x, d, t), t, row(q, k.q_dim(), t), row(keys, k.kv_dim(), t), row(values, k.kv_dim(), t));
    }
    for (std::size_t t = 0; t < n; ++t) {
      k.attend(l, row(q, k.q_dim(), t), keys, values, t, row(x, d, t));
    }
    for (std::size_t t = 0; t < n; ++t) {
      k.mlp(l, row(x, d, t));
      plan.apply(l, t, prompt_len, row(x, d, t));
      if (want[l][t]) {
        const auto r = row(x, d, t);
        trace.captures.push_back({l, t, Tensor({d}, std::vector<float>(r.begin(), r.end()))});
      }
    }
  }

  trace.logits = Tensor({n, cfg.vocab_size});
  for (std::size_t t = 0; t < n; ++t) {
    k.logits(row(x, d, t), trace.logits.row(t));
  }
  return trace;
}

TokenId sample_token(std::span<const float> logits, double temperature, Rng& rng) {
  if (temperature == 0.0) {
    return static_cast<TokenId>(ops::argmax(logits));
  }
  const std::vector<double> p = ops::softmax_f64(logits, temperature);
  const double u = rng.uniform();
  double cum = 0.0;
  std::size_t last_nonzero = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) {
      last_nonzero = i;
    }
    cum += p[i];
    if (u < cum) {
      return static_cast<TokenId>(i);
    }
  }
  return static_cast<TokenId>(last_nonzero);
}

std::vector<TokenId> generate(const ModelBundle& bundle, std::span<const TokenId> prompt,
                              const GenerateOptions& options, const InjectionSet* injections) {
  const ModelConfig& cfg = bundle.config();
  validate_tokens(cfg, prompt);
  if (options.max_new_tokens == 0) {
    fail(ErrorCode::invalid_argument, "generate: max_new_tokens must be >= 1");
  }
  if (!(options.temperature >= 0.0) || !std::isfinite(options.temperature)) {
    fail(ErrorCode::invalid_argument, "generate: temperature must be finite and >= 0");
  }
  const std::size_t d = cfg.d_model;
  const std::size_t prompt_len = prompt.size();
  const std::size_t capacity = std::min(cfg.max_seq_len, prompt_len + options.max_new_tokens);

  InjectionPlan plan(cfg, injections);
  Kernels k(bundle);
  std::vector<std::vector<float>> keys(cfg.n_layers, std::vector<float>(capacity * k.kv_dim()));
  std::vector<std::vector<float>> values(cfg.n_layers, std::vector<float>(capacity * k.kv_dim()));
  std::vector<float> x(d), q(k.q_dim()), logits(cfg.vocab_size);

  auto step = [&](TokenId tok, std::size_t pos, bool want_logits) {
    k.embed(tok, pos, x);
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
      auto kr = std::span<float>(keys[l]).subspan(pos * k.kv_dim(), k.kv_dim());
      auto vr = std::span<float>(values[l]).subspan(pos * k.kv_dim(), k.kv_dim());
      k.qkv(l, x, pos, q, kr, vr);
      k.attend(l, q, keys[l], values[l], pos, x);
      k.mlp(l, x);
      plan.apply(l, pos, prompt_len, x);
    }
    if (want_logits) {
      k.logits(x, logits);
    }
  };

  for (std::size_t t = 0; t < prompt_len; ++t) {
    step(prompt[t], t, t + 1 == prompt_len);
  }

  Rng rng(options.seed);
  const std::optional<TokenId> eos = bundle.tokenizer().eos();
  std::vector<TokenId> out;
  std::size_t pos = prompt_len;
  while (out.size() < options.max_new_tokens) {
    const TokenId next = sample_token(logits, options.temperature, rng);
    if (options.stop_at_eos && eos && next == *eos) {
      break;
    }
    out.push_back(next);
    if (out.size() == options.max_new_tokens || pos >= capacity) {
      break;
    }
    step(next, pos, true);
    ++pos;
  }
  return out;
}

}  // namespace mdf
