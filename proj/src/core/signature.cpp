// Copyright 2026 The MDF Authors
// SPDX-License-Identifier: Apache-2.0

#include "mdf/signature.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "mdf/error.hpp"
#include "mdf/io.hpp"
#include "mdf/parallel.hpp"
#include "mdf/rng.hpp"

namespace mdf {

OverlengthPolicy parse_overlength_policy(std::string_view s) {
  if (s == "error") return OverlengthPolicy::error;
  if (s == "truncate_left") return OverlengthPolicy::truncate_left;
  fail(ErrorCode::invalid_argument, "overlength policy must be error or truncate_left, got '%.*s'",
       static_cast<int>(s.size()), s.data());
}

void DataFeatureSignature::validate() const {
  if (n_instances == 0) {
    fail(ErrorCode::invalid_argument, "signature: n_instances must be >= 1");
  }
  if (layers.empty()) {
    fail(ErrorCode::invalid_argument, "signature: no layers");
  }
  for (const auto& [l, v] : layers) {
    if (v.size() != d_model) {
      fail(ErrorCode::shape, "signature layer %zu has length %zu, expected d_model %zu", l, v.size(), d_model);
    }
    for (double x : v) {
      if (!std::isfinite(x)) {
        fail(ErrorCode::invalid_argument, "signature layer %zu contains non-finite values", l);
      }
    }
  }
}

double DataFeatureSignature::norm(std::size_t layer) const {
  const auto& v = layers.at(layer);
  double ss = 0.0;
  for (double x : v) {
    ss += x * x;
  }
  return std::sqrt(ss);
}

std::vector<std::size_t> DataFeatureSignature::layer_indices() const {
  std::vector<std::size_t> out;
  for (const auto& [l, v] : layers) {
    out.push_back(l);
  }
  return out;
}

std::vector<TokenId> signature_tokens(const ModelBundle& bundle, const Instance& inst,
                                      const ExtractionSettings& settings) {
  const std::string text = render_chat(inst, bundle.chat_template(), settings.source);
  std::vector<TokenId> ids = bundle.tokenizer().encode(text);
  if (ids.empty()) {
    fail(ErrorCode::invalid_argument, "instance tokenizes to an empty sequence");
  }
  const std::size_t max_len = bundle.config().max_seq_len;
  if (ids.size() > max_len) {
    if (settings.overlength == OverlengthPolicy::error) {
      fail(ErrorCode::range, "instance has %zu tokens, exceeding max_seq_len %zu", ids.size(), max_len);
    }
    ids.erase(ids.begin(), ids.end() - static_cast<std::ptrdiff_t>(max_len));
  }
  return ids;
}

DataFeatureSignature extract_signature(const ModelBundle& bundle, const Dataset& dataset,
                                       const ExtractOptions& options) {
  const ModelConfig& cfg = bundle.config();
  if (dataset.instances.empty()) {
    fail(ErrorCode::invalid_argument, "cannot extract a signature from empty dataset '%s'", dataset.name.c_str());
  }
  std::vector<std::size_t> layers = options.layers;
  if (layers.empty()) {
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
      layers.push_back(l);
    }
  }
  for (std::size_t l : layers) {
    if (l >= cfg.n_layers) {
      fail(ErrorCode::range, "signature layer %zu out of range [0, %zu)", l, cfg.n_layers);
    }
  }

  const std::size_t n = dataset.size();
  std::vector<std::size_t> chosen;
  if (options.max_instances && *options.max_instances < n) {
    if (*options.max_instances == 0) {
      fail(ErrorCode::invalid_argument, "max_instances must be >= 1");
    }
    chosen = sample_without_replacement(n, *options.max_instances, options.seed);
  } else {
    chosen.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      chosen[i] = i;
    }
  }

  // captured[i][k] = hidden state of chosen[i] at layers[k], last position.
  std::vector<std::vector<Tensor>> captured(chosen.size());
  parallel_for(chosen.size(), options.jobs, [&](std::size_t i) {
    const std::vector<TokenId> ids = signature_tokens(bundle, dataset.instances[chosen[i]], options.extraction);
    std::vector<CaptureRequest> req;
    for (std::size_t l : layers) {
      req.push_back({l, ids.size() - 1});
    }
    ForwardOptions fo;
    fo.captures = req;
    ForwardTrace trace = forward(bundle, ids, fo);
    // Captures come back ordered by layer; map them to the requested order.
    std::vector<Tensor> by_req(layers.size());
    for (auto& c : trace.captures) {
      for (std::size_t k = 0; k < layers.size(); ++k) {
        if (layers[k] == c.layer) {
          by_req[k] = c.vector;
        }
      }
    }
    captured[i] = std::move(by_req);
  });

  DataFeatureSignature sig;
  sig.model_id = bundle.model_id();
  sig.d_model = cfg.d_model;
  sig.n_instances = chosen.size();
  sig.extraction = options.extraction;
  for (std::size_t k = 0; k < layers.size(); ++k) {
    std::vector<double> sum(cfg.d_model, 0.0);
    for (std::size_t i = 0; i < chosen.size(); ++i) {
      const Tensor& h = captured[i][k];
      for (std::size_t j = 0; j < cfg.d_model; ++j) {
        sum[j] += static_cast<double>(h[j]);
      }
    }
    for (double& v : sum) {
      v /= static_cast<double>(chosen.size());
    }
    sig.layers[layers[k]] = std::move(sum);
  }
  sig.validate();
  return sig;
}

DataFeatureSignature random_signature(const DataFeatureSignature& reference, std::uint64_t seed) {
  reference.validate();
  DataFeatureSignature out = reference;
  for (auto& [layer, vec] : out.layers) {
    const double target = reference.norm(layer);
    Rng rng(derive_seed(seed, layer));
    double ss = 0.0;
    for (double& v : vec) {
      v = rng.normal();
      ss += v * v;
    }
    const double scale = target == 0.0 ? 0.0 : target / std::sqrt(ss);
    for (double& v : vec) {
      v *= scale;
    }
  }
  return out;
}

nlohmann::json Provenance::to_json() const {
  return {{"tool_version", tool_version}, {"config_hash", config_hash}, {"seed", seed}};
}

nlohmann::json signature_to_json(const DataFeatureSignature& sig, const std::optional<Provenance>& provenance) {
  nlohmann::json layers = nlohmann::json::object();
  for (const auto& [l, v] : sig.layers) {
    layers[std::to_string(l)] = v;
  }
  nlohmann::json j = {{"version", 1},
                      {"model_id", sig.model_id},
                      {"d_model", sig.d_model},
                      {"n_instances", sig.n_instances},
                      {"extraction", {{"position", "last"}, {"source", render_source_name(sig.extraction.source)}}},
                      {"layers", layers}};
  if (provenance) {
    j["provenance"] = provenance->to_json();
  }
  return j;
}

DataFeatureSignature signature_from_json(const nlohmann::json& j) {
  DataFeatureSignature sig;
  try {
    if (j.at("version").get<int>() != 1) {
      fail(ErrorCode::format, "signature file: unsupported version %d", j.at("version").get<int>());
    }
    sig.model_id = j.at("model_id").get<std::string>();
    sig.d_model = j.at("d_model").get<std::size_t>();
    sig.n_instances = j.at("n_instances").get<std::size_t>();
    const auto& ex = j.at("extraction");
    if (ex.at("position").get<std::string>() != "last") {
      fail(ErrorCode::format, "signature file: only position \"last\" is supported");
    }
    sig.extraction.source = parse_render_source(ex.at("source").get<std::string>());
    for (const auto& [k, v] : j.at("layers").items()) {
      std::size_t consumed = 0;
      const unsigned long l = std::stoul(k, &consumed);
      if (consumed != k.size()) {
        fail(ErrorCode::format, "signature file: bad layer key '%s'", k.c_str());
      }
      sig.layers[l] = v.get<std::vector<double>>();
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::format, "signature file: %s", e.what());
  } catch (const std::logic_error& e) {
    fail(ErrorCode::format, "signature file: %s", e.what());
  }
  sig.validate();
  return sig;
}

void save_signature(const std::filesystem::path& path, const DataFeatureSignature& sig,
                    const std::optional<Provenance>& provenance) {
  write_file(path, signature_to_json(sig, provenance).dump(1) + "\n");
}

DataFeatureSignature load_signature(const std::filesystem::path& path) {
  return signature_from_json(read_json_file(path));
}

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) {
    return 0.0;
  }
  return ab / std::sqrt(aa * bb);
}

}  // namespace mdf
