// Copyright 2026 The MDF Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <unistd.h>

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mdf/dataset.hpp"
#include "mdf/model.hpp"
#include "mdf/tensor.hpp"
#include "mdf/toy.hpp"

namespace mdf::test {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    std::string tmpl = (fs::temp_directory_path() / "mdf-test-XXXXXX").string();
    if (mkdtemp(tmpl.data()) == nullptr) {
      throw std::runtime_error("mkdtemp failed");
    }
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

// Copy of `base` with some tensors replaced (or removed when the value is empty).
inline std::shared_ptr<const ModelBundle> with_tensors(const ModelBundle& base,
                                                       const std::map<std::string, Tensor>& replace,
                                                       std::string id = "patched") {
  auto tensors = base.tensors();
  for (const auto& [name, t] : replace) {
    if (t.empty()) {
      tensors.erase(name);
    } else {
      tensors[name] = t;
    }
  }
  return ModelBundle::create(std::move(id), base.config(), std::move(tensors), base.tokenizer(),
                             base.chat_template());
}

inline bool bit_equal(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) {
    return false;
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::memcmp(&a[i], &b[i], sizeof(float)) != 0) {
      return false;
    }
  }
  return true;
}

inline std::vector<TokenId> bytes_of(const std::string& s) {
  std::vector<TokenId> ids;
  for (unsigned char c : s) {
    ids.push_back(c);
  }
  return ids;
}

inline Dataset text_dataset(const std::vector<std::string>& texts, std::string name = "d") {
  Dataset d;
  d.name = std::move(name);
  for (const auto& t : texts) {
    d.instances.push_back(Instance::text(t));
  }
  return d;
}

inline PromptSet user_prompts(const std::vector<std::string>& texts) {
  PromptSet p;
  p.name = "probes";
  for (const auto& t : texts) {
    p.instances.push_back(Instance::chat({{Role::user, t}}));
  }
  return p;
}

// Straight-line reference forward pass written against the raw tensor map.
// It computes every position of a layer before moving on, uses its own
// loops, and rounds to f32 at the same points as the runtime's documented
// numeric contract: f64 accumulation inside each dot product / norm /
// softmax, f32 storage of every produced vector and of every residual add.
struct OracleInjection {
  std::size_t layer = 0;
  std::size_t position = 0;
  std::vector<float> delta;
};

struct OracleResult {
  std::vector<std::vector<float>> logits;                     // [n][vocab]
  std::vector<std::vector<std::vector<float>>> hidden;        // [layer][n][d]
};

inline OracleResult oracle_forward(const ModelBundle& b, const std::vector<TokenId>& toks,
                                   const std::vector<OracleInjection>& injections = {}) {
  const ModelConfig& cfg = b.config();
  const auto& T = b.tensors();
  auto W = [&](const std::string& name) -> const Tensor& { return T.at(name); };
  auto opt = [&](const std::string& name) -> const Tensor* {
    auto it = T.find(name);
    return it == T.end() ? nullptr : &it->second;
  };
  auto L = [](std::size_t l, const char* s) { return "layers." + std::to_string(l) + "." + s; };

  const std::size_t n = toks.size(), d = cfg.d_model, hd = d / cfg.n_heads;
  using Vec = std::vector<float>;

  auto norm = [&](const Vec& v, const Tensor& g, const Tensor* bias) {
    Vec out(v.size());
    const double len = static_cast<double>(v.size());
    if (cfg.norm_kind == NormKind::rms) {
      double ss = 0;
      for (float e : v) ss += static_cast<double>(e) * e;
      const double inv = 1.0 / std::sqrt(ss / len + cfg.norm_eps);
      for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(g[i] * (v[i] * inv));
    } else {
      double mean = 0;
      for (float e : v) mean += e;
      mean /= len;
      double var = 0;
      for (float e : v) var += (e - mean) * (e - mean);
      var /= len;
      const double inv = 1.0 / std::sqrt(var + cfg.norm_eps);
      for (std::size_t i = 0; i < v.size(); ++i) {
        out[i] = static_cast<float>(g[i] * ((v[i] - mean) * inv) + (bias ? static_cast<double>((*bias)[i]) : 0.0));
      }
    }
    return out;
  };
  auto lin = [](const Tensor& w, const Tensor* bias, const Vec& v) {
    const std::size_t rows = w.dim(0), cols = w.dim(1);
    Vec out(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      double acc = 0;
      for (std::size_t c = 0; c < cols; ++c) acc += static_cast<double>(w[r * cols + c]) * v[c];
      if (bias) acc += (*bias)[r];
      out[r] = static_cast<float>(acc);
    }
    return out;
  };
  auto rope = [&](Vec& v, std::size_t heads, std::size_t pos) {
    const std::size_t half = hd / 2;
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < half; ++i) {
        const double angle = static_cast<double>(pos) * std::pow(10000.0, -2.0 * i / static_cast<double>(hd));
        const double a = v[h * hd + i], c = v[h * hd + i + half];
        v[h * hd + i] = static_cast<float>(a * std::cos(angle) - c * std::sin(angle));
        v[h * hd + i + half] = static_cast<float>(a * std::sin(angle) + c * std::cos(angle));
      }
    }
  };

  std::vector<Vec> x(n, Vec(d));
  const Tensor& emb = W("tok_embeddings.weight");
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t i = 0; i < d; ++i) {
      x[t][i] = emb[static_cast<std::size_t>(toks[t]) * d + i];
      if (cfg.pos_encoding == PosEncoding::learned) x[t][i] = x[t][i] + W("pos_embeddings.weight")[t * d + i];
    }
  }

  OracleResult res;
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    std::vector<Vec> q(n), k(n), v(n);
    for (std::size_t t = 0; t < n; ++t) {
      const Vec h = norm(x[t], W(L(l, "attn_norm.weight")), opt(L(l, "attn_norm.bias")));
      q[t] = lin(W(L(l, "attn.wq.weight")), opt(L(l, "attn.wq.bias")), h);
      k[t] = lin(W(L(l, "attn.wk.weight")), opt(L(l, "attn.wk.bias")), h);
      v[t] = lin(W(L(l, "attn.wv.weight")), opt(L(l, "attn.wv.bias")), h);
      if (cfg.pos_encoding == PosEncoding::rope) {
        rope(q[t], cfg.n_heads, t);
        rope(k[t], cfg.n_kv_heads, t);
      }
    }
    const std::size_t per_kv = cfg.n_heads / cfg.n_kv_heads;
    for (std::size_t t = 0; t < n; ++t) {
      Vec att(cfg.n_heads * hd);
      for (std::size_t h = 0; h < cfg.n_heads; ++h) {
        const std::size_t kvh = h / per_kv;
        std::vector<double> s(t + 1);
        double mx = -INFINITY;
        for (std::size_t j = 0; j <= t; ++j) {
          double acc = 0;
          for (std::size_t i = 0; i < hd; ++i) acc += static_cast<double>(q[t][h * hd + i]) * k[j][kvh * hd + i];
          s[j] = acc * (1.0 / std::sqrt(static_cast<double>(hd)));
          mx = std::max(mx, s[j]);
        }
        double sum = 0;
        for (auto& e : s) {
          e = std::exp(e - mx);
          sum += e;
        }
        for (std::size_t i = 0; i < hd; ++i) {
          double acc = 0;
          for (std::size_t j = 0; j <= t; ++j) acc += (s[j] / sum) * static_cast<double>(v[j][kvh * hd + i]);
          att[h * hd + i] = static_cast<float>(acc);
        }
      }
      const Vec o = lin(W(L(l, "attn.wo.weight")), opt(L(l, "attn.wo.bias")), att);
      for (std::size_t i = 0; i < d; ++i) x[t][i] = x[t][i] + o[i];
    }
    for (std::size_t t = 0; t < n; ++t) {
      const Vec h = norm(x[t], W(L(l, "mlp_norm.weight")), opt(L(l, "mlp_norm.bias")));
      Vec up = lin(W(L(l, "mlp.w_up.weight")), opt(L(l, "mlp.w_up.bias")), h);
      if (cfg.act_kind == Activation::silu_gated) {
        const Vec gate = lin(W(L(l, "mlp.w_gate.weight")), opt(L(l, "mlp.w_gate.bias")), h);
        for (std::size_t i = 0; i < up.size(); ++i) {
          const double g = gate[i];
          up[i] = static_cast<float>(g / (1.0 + std::exp(-g))) * up[i];
        }
      } else {
        for (float& u : up) {
          const double z = u;
          u = static_cast<float>(0.5 * z * (1.0 + std::tanh(0.7978845608028654 * (z + 0.044715 * z * z * z))));
        }
      }
      const Vec down = lin(W(L(l, "mlp.w_down.weight")), opt(L(l, "mlp.w_down.bias")), up);
      for (std::size_t i = 0; i < d; ++i) x[t][i] = x[t][i] + down[i];
    }
    for (const auto& inj : injections) {
      if (inj.layer == l) {
        for (std::size_t i = 0; i < d; ++i) x[inj.position][i] = x[inj.position][i] + inj.delta[i];
      }
    }
    res.hidden.push_back(x);
  }

  const Tensor& unemb = cfg.tie_embeddings ? W("tok_embeddings.weight") : W("lm_head.weight");
  for (std::size_t t = 0; t < n; ++t) {
    res.logits.push_back(lin(unemb, nullptr, norm(x[t], W("norm_f.weight"), opt("norm_f.bias"))));
  }
  return res;
}

}  // namespace mdf::test
