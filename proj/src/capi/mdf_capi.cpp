// Copyright 2026 The MDF Authors
// SPDX-License-Identifier: Apache-2.0

#include "mdf/mdf.h"

#include <cstdlib>
#include <cstring>
#include <new>
#include <string>

#include <nlohmann/json.hpp>

#include "mdf/error.hpp"
#include "mdf/intervention.hpp"
#include "mdf/io.hpp"
#include "mdf/run.hpp"
#include "mdf/signature.hpp"

struct mdf_bundle {
  std::shared_ptr<const mdf::ModelBundle> impl;
};
struct mdf_dataset {
  mdf::Dataset impl;
};
struct mdf_signature {
  std::shared_ptr<const mdf::DataFeatureSignature> impl;
};

namespace {

thread_local std::string g_last_error;

template <typename F>
mdf_status guard(F&& f) {
  try {
    f();
    g_last_error.clear();
    return MDF_OK;
  } catch (const mdf::Error& e) {
    g_last_error = e.what();
    return static_cast<mdf_status>(static_cast<int>(e.code()));
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return MDF_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return MDF_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return MDF_ERR_INTERNAL;
  }
}

void require(const void* p, const char* what) {
  if (!p) {
    mdf::fail(mdf::ErrorCode::invalid_argument, "%s must not be NULL", what);
  }
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

nlohmann::json parse_json(const char* text, const char* what) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    mdf::fail(mdf::ErrorCode::invalid_argument, "%s is not valid JSON: %s", what, e.what());
  }
}

mdf::PositionSelector parse_positions(const char* s, int persist) {
  mdf::PositionSelector p;
  p.persist_during_decoding = persist != 0;
  if (!s || std::strcmp(s, "all") == 0) return p;
  if (std::strcmp(s, "last") == 0) {
    p.mode = mdf::PositionSelector::Mode::last;
    return p;
  }
  if (std::strncmp(s, "from:", 5) == 0) {
    char* end = nullptr;
    const unsigned long long k = std::strtoull(s + 5, &end, 10);
    if (end != s + 5 && *end == '\0') {
      p.mode = mdf::PositionSelector::Mode::from_index;
      p.index = static_cast<std::size_t>(k);
      return p;
    }
  }
  mdf::fail(mdf::ErrorCode::invalid_argument, "positions must be all, last or from:<k>, got '%s'", s);
}

}  // namespace

extern "C" {

const char* mdf_version(void) { return mdf::tool_version().data(); }

const char* mdf_last_error(void) { return g_last_error.c_str(); }

const char* mdf_status_name(mdf_status status) {
  switch (status) {
    case MDF_OK: return "ok";
    case MDF_ERR_INVALID_ARGUMENT: return "invalid argument";
    case MDF_ERR_IO: return "i/o error";
    case MDF_ERR_FORMAT: return "format error";
    case MDF_ERR_SHAPE: return "shape error";
    case MDF_ERR_RANGE: return "range error";
    case MDF_ERR_EVALUATOR: return "evaluator error";
    case MDF_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

void mdf_string_free(char* s) { std::free(s); }

mdf_status mdf_bundle_load(const char* dir, mdf_bundle** out) {
  return guard([&] {
    require(dir, "dir");
    require(out, "out");
    *out = new mdf_bundle{mdf::load_bundle(dir)};
  });
}

void mdf_bundle_free(mdf_bundle* bundle) { delete bundle; }

mdf_status mdf_bundle_info(const mdf_bundle* bundle, char** json_out) {
  return guard([&] {
    require(bundle, "bundle");
    require(json_out, "json_out");
    const auto& b = *bundle->impl;
    const nlohmann::json j = {{"model_id", b.model_id()},
                              {"config", b.config().to_json()},
                              {"parameters", b.parameter_count()},
                              {"upcast_from_f16", b.upcast_from_f16()}};
    *json_out = dup_string(j.dump());
  });
}

mdf_status mdf_bundle_save(const mdf_bundle* bundle, const char* dir, int f16) {
  return guard([&] {
    require(bundle, "bundle");
    require(dir, "dir");
    mdf::save_bundle(dir, *bundle->impl, f16 ? mdf::StorageDtype::f16 : mdf::StorageDtype::f32);
  });
}

mdf_status mdf_tokenize(const mdf_bundle* bundle, const char* text, int32_t** ids_out, size_t* n_out) {
  return guard([&] {
    require(bundle, "bundle");
    require(text, "text");
    require(ids_out, "ids_out");
    require(n_out, "n_out");
    const auto ids = bundle->impl->tokenizer().encode(text);
    auto* buf = static_cast<int32_t*>(std::malloc(std::max<std::size_t>(1, ids.size()) * sizeof(int32_t)));
    if (!buf) throw std::bad_alloc();
    std::copy(ids.begin(), ids.end(), buf);
    *ids_out = buf;
    *n_out = ids.size();
  });
}

void mdf_ids_free(int32_t* ids) { std::free(ids); }

mdf_status mdf_detokenize(const mdf_bundle* bundle, const int32_t* ids, size_t n, char** text_out) {
  return guard([&] {
    require(bundle, "bundle");
    require(text_out, "text_out");
    if (n > 0) require(ids, "ids");
    *text_out = dup_string(bundle->impl->tokenizer().decode(std::span<const mdf::TokenId>(ids, n)));
  });
}

mdf_status mdf_forward_logits(const mdf_bundle* bundle, const int32_t* ids, size_t n, float* logits_out,
                              size_t logits_len) {
  return guard([&] {
    require(bundle, "bundle");
    require(ids, "ids");
    require(logits_out, "logits_out");
    const auto& cfg = bundle->impl->config();
    if (logits_len != cfg.vocab_size) {
      mdf::fail(mdf::ErrorCode::shape, "logits buffer has %zu entries, vocab_size is %zu", logits_len,
                cfg.vocab_size);
    }
    const auto trace = mdf::forward(*bundle->impl, std::span<const mdf::TokenId>(ids, n));
    const auto last = trace.logits.row(n - 1);
    std::copy(last.begin(), last.end(), logits_out);
  });
}

mdf_status mdf_generate(const mdf_bundle* bundle, const char* prompt_text, size_t max_new_tokens,
                        double temperature, uint64_t seed, const mdf_intervention* intervention, char** text_out) {
  return guard([&] {
    require(bundle, "bundle");
    require(prompt_text, "prompt_text");
    require(text_out, "text_out");
    const auto& b = *bundle->impl;
    mdf::InjectionSet injections;
    if (intervention && intervention->signature) {
      mdf::InterventionSpec spec;
      spec.signature = intervention->signature->impl;
      spec.alpha = intervention->alpha;
      if (intervention->layers) {
        spec.layers.assign(intervention->layers, intervention->layers + intervention->n_layers);
      }
      spec.positions = parse_positions(intervention->positions, intervention->persist_during_decoding);
      injections = mdf::apply(spec, b.config().d_model);
    }
    mdf::GenerateOptions go;
    go.max_new_tokens = max_new_tokens;
    go.temperature = temperature;
    go.seed = seed;
    const auto prompt = b.tokenizer().encode(prompt_text);
    const auto out = mdf::generate(b, prompt, go, injections.empty() ? nullptr : &injections);
    *text_out = dup_string(b.tokenizer().decode(out));
  });
}

mdf_status mdf_dataset_load(const char* path, mdf_dataset** out) {
  return guard([&] {
    require(path, "path");
    require(out, "out");
    *out = new mdf_dataset{mdf::load_jsonl(path)};
  });
}

void mdf_dataset_free(mdf_dataset* dataset) { delete dataset; }

size_t mdf_dataset_size(const mdf_dataset* dataset) { return dataset ? dataset->impl.size() : 0; }

mdf_status mdf_signature_extract(const mdf_bundle* bundle, const mdf_dataset* dataset, const size_t* layers,
                                 size_t n_layers, size_t max_instances, uint64_t seed, unsigned jobs,
                                 mdf_signature** out) {
  return guard([&] {
    require(bundle, "bundle");
    require(dataset, "dataset");
    require(out, "out");
    mdf::ExtractOptions o;
    if (layers) o.layers.assign(layers, layers + n_layers);
    if (max_instances) o.max_instances = max_instances;
    o.seed = seed;
    o.jobs = jobs;
    *out = new mdf_signature{
        std::make_shared<mdf::DataFeatureSignature>(mdf::extract_signature(*bundle->impl, dataset->impl, o))};
  });
}

mdf_status mdf_signature_random(const mdf_signature* reference, uint64_t seed, mdf_signature** out) {
  return guard([&] {
    require(reference, "reference");
    require(out, "out");
    *out = new mdf_signature{
        std::make_shared<mdf::DataFeatureSignature>(mdf::random_signature(*reference->impl, seed))};
  });
}

mdf_status mdf_signature_load(const char* path, mdf_signature** out) {
  return guard([&] {
    require(path, "path");
    require(out, "out");
    *out = new mdf_signature{std::make_shared<mdf::DataFeatureSignature>(mdf::load_signature(path))};
  });
}

mdf_status mdf_signature_save(const mdf_signature* signature, const char* path) {
  return guard([&] {
    require(signature, "signature");
    require(path, "path");
    mdf::save_signature(path, *signature->impl);
  });
}

void mdf_signature_free(mdf_signature* signature) { delete signature; }

size_t mdf_signature_d_model(const mdf_signature* signature) { return signature ? signature->impl->d_model : 0; }

size_t mdf_signature_n_instances(const mdf_signature* signature) {
  return signature ? signature->impl->n_instances : 0;
}

mdf_status mdf_signature_layer(const mdf_signature* signature, size_t layer, double* out, size_t out_len) {
  return guard([&] {
    require(signature, "signature");
    require(out, "out");
    const auto& sig = *signature->impl;
    auto it = sig.layers.find(layer);
    if (it == sig.layers.end()) {
      mdf::fail(mdf::ErrorCode::range, "signature has no layer %zu", layer);
    }
    if (out_len != sig.d_model) {
      mdf::fail(mdf::ErrorCode::shape, "buffer has %zu entries, d_model is %zu", out_len, sig.d_model);
    }
    std::copy(it->second.begin(), it->second.end(), out);
  });
}

mdf_status mdf_run(const char* command, const char* config_json, const char* base_dir, const char* overrides_json,
                   char** summary_out) {
  return guard([&] {
    require(command, "command");
    require(config_json, "config_json");
    require(summary_out, "summary_out");
    const nlohmann::json config = parse_json(config_json, "config");
    mdf::RunOverrides o;
    if (overrides_json) {
      const nlohmann::json j = parse_json(overrides_json, "overrides");
      if (!j.is_object()) {
        mdf::fail(mdf::ErrorCode::invalid_argument, "overrides must be a JSON object");
      }
      for (const auto& [k, v] : j.items()) {
        if (k != "seed" && k != "jobs" && k != "out" && k != "baseline") {
          mdf::fail(mdf::ErrorCode::invalid_argument, "overrides: unknown key '%s'", k.c_str());
        }
      }
      if (j.contains("seed")) o.seed = j.at("seed").get<std::uint64_t>();
      if (j.contains("jobs")) o.jobs = j.at("jobs").get<unsigned>();
      if (j.contains("out")) o.out = j.at("out").get<std::string>();
      if (j.contains("baseline")) o.baseline = j.at("baseline").get<std::string>();
    }
    const mdf::RunResult r = mdf::run(command, config, base_dir ? base_dir : "", o);
    *summary_out = dup_string(nlohmann::json({{"summary", r.summary}, {"message", r.message}}).dump());
  });
}

mdf_status mdf_config_hash(const char* config_json, char** hash_out) {
  return guard([&] {
    require(config_json, "config_json");
    require(hash_out, "hash_out");
    *hash_out = dup_string(mdf::config_hash(parse_json(config_json, "config")));
  });
}

}  // extern "C"
