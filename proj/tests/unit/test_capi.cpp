// Copyright 2026 The MDF Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstring>
#include <thread>

#include <doctest/doctest.h>
#include <nlohmann/json.hpp>

#include "helpers.hpp"
#include "mdf/evaluator.hpp"
#include "mdf/intervention.hpp"
#include "mdf/io.hpp"
#include "mdf/mdf.h"
#include "mdf/run.hpp"
#include "mdf/signature.hpp"

using namespace mdf::test;
using nlohmann::json;

namespace {

struct World {
  TempDir dir;
  std::shared_ptr<const mdf::ModelBundle> core;
  mdf_bundle* bundle = nullptr;

  World() {
    core = mdf::toy::random_bundle(mdf::toy::small_config(), 17, 0.4f, true);
    mdf::save_bundle(dir / "b", *core);
    core = mdf::load_bundle(dir / "b");
    REQUIRE(mdf_bundle_load((dir / "b").c_str(), &bundle) == MDF_OK);
    std::string jl;
    for (const char* t : {"12 34 56", "78 90", "hello there", "9 9 9 1"}) {
      jl += mdf::instance_to_json(mdf::Instance::text(t)).dump() + "\n";
    }
    mdf::write_file(dir / "d.jsonl", jl);
  }
  ~World() { mdf_bundle_free(bundle); }
};

std::string take(char* s) {
  std::string out = s ? s : "";
  mdf_string_free(s);
  return out;
}

}  // namespace

TEST_CASE("capi: status reporting") {
  CHECK(std::string(mdf_version()) == mdf::tool_version());
  CHECK(std::string(mdf_status_name(MDF_OK)) == "ok");
  CHECK(std::string(mdf_status_name(MDF_ERR_EVALUATOR)) == "evaluator error");
  mdf_bundle* b = nullptr;
  CHECK(mdf_bundle_load(nullptr, &b) == MDF_ERR_INVALID_ARGUMENT);
  CHECK(std::strlen(mdf_last_error()) > 0);
  CHECK(mdf_bundle_load("/nonexistent/bundle-dir", &b) == MDF_ERR_IO);
  CHECK(std::string(mdf_last_error()).find("/nonexistent/bundle-dir") != std::string::npos);
  CHECK(b == nullptr);

  // Errors are per thread.
  std::string other;
  std::thread t([&] {
    char* h = nullptr;
    CHECK(mdf_config_hash("{}", &h) == MDF_OK);
    mdf_string_free(h);
    other = mdf_last_error();
  });
  t.join();
  CHECK(other.empty());
  CHECK(std::string(mdf_last_error()).find("/nonexistent/bundle-dir") != std::string::npos);
  mdf_bundle_free(nullptr);
  mdf_string_free(nullptr);
}

TEST_CASE("capi: bundle info, tokenizer and logits match the core") {
  World w;
  char* info = nullptr;
  REQUIRE(mdf_bundle_info(w.bundle, &info) == MDF_OK);
  const json j = json::parse(take(info));
  CHECK(j.at("parameters") == w.core->parameter_count());
  CHECK(j.at("config").at("d_model") == 32);
  CHECK(j.at("upcast_from_f16") == false);

  int32_t* ids = nullptr;
  size_t n = 0;
  REQUIRE(mdf_tokenize(w.bundle, "héllo <|eos|>", &ids, &n) == MDF_OK);
  const auto expect = w.core->tokenizer().encode("héllo <|eos|>");
  REQUIRE(n == expect.size());
  CHECK(std::equal(ids, ids + n, expect.begin()));
  char* text = nullptr;
  REQUIRE(mdf_detokenize(w.bundle, ids, n, &text) == MDF_OK);
  CHECK(take(text) == w.core->tokenizer().decode(expect));

  std::vector<float> logits(258);
  REQUIRE(mdf_forward_logits(w.bundle, ids, n, logits.data(), logits.size()) == MDF_OK);
  const mdf::ForwardTrace tr = mdf::forward(*w.core, expect);
  CHECK(bit_equal(logits, tr.logits.data().subspan((n - 1) * 258, 258)));
  CHECK(mdf_forward_logits(w.bundle, ids, n, logits.data(), 10) != MDF_OK);
  CHECK(mdf_forward_logits(w.bundle, ids, 0, logits.data(), logits.size()) != MDF_OK);
  const int32_t bad[] = {999};
  CHECK(mdf_forward_logits(w.bundle, bad, 1, logits.data(), logits.size()) == MDF_ERR_RANGE);
  mdf_ids_free(ids);

  REQUIRE(mdf_bundle_save(w.bundle, (w.dir / "copy").c_str(), 0) == MDF_OK);
  CHECK(mdf::read_file(w.dir / "copy/model.safetensors") == mdf::read_file(w.dir / "b/model.safetensors"));
}

TEST_CASE("capi: generation with and without an intervention") {
  World w;
  mdf_dataset* ds = nullptr;
  REQUIRE(mdf_dataset_load((w.dir / "d.jsonl").c_str(), &ds) == MDF_OK);
  mdf_signature* sig = nullptr;
  REQUIRE(mdf_signature_extract(w.bundle, ds, nullptr, 0, 0, 1, 2, &sig) == MDF_OK);

  char* plain = nullptr;
  REQUIRE(mdf_generate(w.bundle, "abc", 12, 1.0, 42, nullptr, &plain) == MDF_OK);
  mdf::GenerateOptions go;
  go.max_new_tokens = 12;
  go.temperature = 1.0;
  go.seed = 42;
  const auto prompt = w.core->tokenizer().encode("abc");
  CHECK(take(plain) == w.core->tokenizer().decode(mdf::generate(*w.core, prompt, go)));

  const size_t layers[] = {1};
  mdf_intervention iv{sig, 3.0, layers, 1, "from:2", 1};
  char* steered = nullptr;
  REQUIRE(mdf_generate(w.bundle, "abc", 12, 1.0, 42, &iv, &steered) == MDF_OK);
  mdf::InterventionSpec spec;
  spec.signature = std::make_shared<mdf::DataFeatureSignature>(
      mdf::extract_signature(*w.core, mdf::load_jsonl(w.dir / "d.jsonl"), mdf::ExtractOptions{{}, {}, 1, {}, 1}));
  spec.alpha = 3.0;
  spec.layers = {1};
  spec.positions.mode = mdf::PositionSelector::Mode::from_index;
  spec.positions.index = 2;
  const mdf::InjectionSet inj = mdf::apply(spec, 32);
  CHECK(take(steered) == w.core->tokenizer().decode(mdf::generate(*w.core, prompt, go, &inj)));

  iv.positions = "sideways";
  char* never = nullptr;
  CHECK(mdf_generate(w.bundle, "abc", 12, 1.0, 42, &iv, &never) == MDF_ERR_INVALID_ARGUMENT);
  CHECK(never == nullptr);
  mdf_signature_free(sig);
  mdf_dataset_free(ds);
}

TEST_CASE("capi: signatures") {
  World w;
  mdf_dataset* ds = nullptr;
  REQUIRE(mdf_dataset_load((w.dir / "d.jsonl").c_str(), &ds) == MDF_OK);
  CHECK(mdf_dataset_size(ds) == 4);
  mdf_signature* sig = nullptr;
  const size_t layers[] = {0, 1};
  REQUIRE(mdf_signature_extract(w.bundle, ds, layers, 2, 3, 8, 1, &sig) == MDF_OK);
  CHECK(mdf_signature_d_model(sig) == 32);
  CHECK(mdf_signature_n_instances(sig) == 3);

  mdf::ExtractOptions o;
  o.max_instances = 3;
  o.seed = 8;
  const mdf::DataFeatureSignature core = mdf::extract_signature(*w.core, mdf::load_jsonl(w.dir / "d.jsonl"), o);
  std::vector<double> layer(32);
  for (size_t l : {0, 1}) {
    REQUIRE(mdf_signature_layer(sig, l, layer.data(), layer.size()) == MDF_OK);
    CHECK(layer == core.layers.at(l));
  }
  CHECK(mdf_signature_layer(sig, 5, layer.data(), layer.size()) == MDF_ERR_RANGE);
  CHECK(mdf_signature_layer(sig, 0, layer.data(), 3) != MDF_OK);

  mdf_signature* rnd = nullptr;
  REQUIRE(mdf_signature_random(sig, 4, &rnd) == MDF_OK);
  std::vector<double> r(32);
  REQUIRE(mdf_signature_layer(rnd, 1, r.data(), r.size()) == MDF_OK);
  CHECK(r == mdf::random_signature(core, 4).layers.at(1));

  const std::string path = (w.dir / "sig.json").string();
  REQUIRE(mdf_signature_save(sig, path.c_str()) == MDF_OK);
  mdf_signature* back = nullptr;
  REQUIRE(mdf_signature_load(path.c_str(), &back) == MDF_OK);
  std::vector<double> again(32);
  REQUIRE(mdf_signature_layer(back, 0, again.data(), again.size()) == MDF_OK);
  CHECK(again == core.layers.at(0));
  CHECK(mdf_signature_load((w.dir / "missing.json").c_str(), &back) == MDF_ERR_IO);

  const size_t bad_layers[] = {7};
  mdf_signature* none = nullptr;
  CHECK(mdf_signature_extract(w.bundle, ds, bad_layers, 1, 0, 0, 1, &none) == MDF_ERR_RANGE);
  mdf_signature_free(back);
  mdf_signature_free(rnd);
  mdf_signature_free(sig);
  mdf_dataset_free(ds);
  CHECK(mdf_dataset_load((w.dir / "nope.jsonl").c_str(), &ds) == MDF_ERR_IO);
}

TEST_CASE("capi: run and config hash") {
  World w;
  const json cfg = {{"model", "b"}, {"dataset", "d.jsonl"}, {"seed", 3}, {"output", "out"}};
  char* summary = nullptr;
  REQUIRE(mdf_run("validate", cfg.dump().c_str(), w.dir.path().c_str(), nullptr, &summary) == MDF_OK);
  const json v = json::parse(take(summary));
  CHECK(v.at("summary").at("parameters") == w.core->parameter_count());
  CHECK(v.at("message").get<std::string>().find("OK") != std::string::npos);

  REQUIRE(mdf_run("extract", cfg.dump().c_str(), w.dir.path().c_str(), R"({"jobs": 2, "out": "o2"})", &summary) == MDF_OK);
  CHECK(json::parse(take(summary)).at("summary").at("n_instances") == 4);
  CHECK(mdf::load_signature(w.dir / "o2/signature.json").n_instances == 4);

  CHECK(mdf_run("extract", "{bad json", w.dir.path().c_str(), nullptr, &summary) == MDF_ERR_INVALID_ARGUMENT);
  CHECK(mdf_run("fly", cfg.dump().c_str(), w.dir.path().c_str(), nullptr, &summary) == MDF_ERR_INVALID_ARGUMENT);
  CHECK(mdf_run("extract", cfg.dump().c_str(), w.dir.path().c_str(), R"({"colour": 1})", &summary) ==
        MDF_ERR_INVALID_ARGUMENT);
  json missing = cfg;
  missing["dataset"] = "gone.jsonl";
  CHECK(mdf_run("extract", missing.dump().c_str(), w.dir.path().c_str(), nullptr, &summary) == MDF_ERR_IO);

  char* h = nullptr;
  REQUIRE(mdf_config_hash(cfg.dump().c_str(), &h) == MDF_OK);
  CHECK(take(h) == mdf::config_hash(cfg));
  CHECK(mdf_config_hash("[1,2", &h) == MDF_ERR_INVALID_ARGUMENT);
}
