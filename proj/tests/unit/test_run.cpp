// Copyright 2026 The MDF Authors
// SPDX-License-Identifier: Apache-2.0

#include <regex>

#include <doctest/doctest.h>

#include "helpers.hpp"
#include "mdf/error.hpp"
#include "mdf/io.hpp"
#include "mdf/run.hpp"
#include "mdf/signature.hpp"

using namespace mdf;
using namespace mdf::test;
using nlohmann::json;

namespace {

std::string to_jsonl(const Dataset& ds) {
  std::string out;
  for (const auto& inst : ds.instances) out += instance_to_json(inst).dump() + "\n";
  return out;
}

// The planted world on disk plus a small predict config.
json write_world(const TempDir& dir, StorageDtype dtype = StorageDtype::f32) {
  const toy::PlantedWorld w = toy::planted_world(7, 48, 6);
  save_bundle(dir / "model", *w.model, dtype);
  write_file(dir / "biased.jsonl", to_jsonl(w.biased));
  write_file(dir / "normal.jsonl", to_jsonl(w.normal));
  write_file(dir / "probes.jsonl", to_jsonl(w.probes));
  return {{"model", "model"},
          {"dataset", "biased.jsonl"},
          {"normal_dataset", "normal.jsonl"},
          {"prompts", "probes.jsonl"},
          {"evaluator", {{"kind", "entity_match"}, {"aliases", {w.target}}}},
          {"grid", {{"alphas", {0.0, 1.0, 2.0}}}},
          {"seed", 5},
          {"sampling", {{"samples_per_prompt", 3}, {"max_new_tokens", 6}}},
          {"lens", {{"entity", w.target}, {"variants", {w.target}}, {"sample_n", 48}}},
          {"output", "out"}};
}

Error run_error(std::string_view cmd, const json& cfg, const fs::path& base) {
  try {
    run(cmd, cfg, base);
  } catch (const Error& e) {
    return e;
  }
  FAIL("expected an error");
  return Error(ErrorCode::internal, "unreachable");
}

}  // namespace

TEST_SUITE("run") {
  TEST_CASE("extract writes a loadable signature") {
    TempDir dir;
    json cfg = write_world(dir);
    cfg["signature"] = {{"max_instances", 4}};
    const RunResult r = run("extract", cfg, dir.path());
    CHECK(r.summary.at("n_instances") == 4);
    CHECK(r.message.find("signature over 4 instances") != std::string::npos);
    const DataFeatureSignature sig = load_signature(dir / "out/signature.json");
    CHECK(sig.n_instances == 4);
    CHECK(sig.layers.size() == 2);
    const json j = read_json_file(dir / "out/signature.json");
    CHECK(j.at("provenance").at("seed") == 5);
    CHECK(j.at("provenance").at("config_hash") == config_hash(cfg));

    const std::string first = read_file(dir / "out/signature.json");
    run("extract", cfg, dir.path(), RunOverrides{std::nullopt, 3u, std::nullopt, std::nullopt});
    CHECK(read_file(dir / "out/signature.json") == first);
  }

  TEST_CASE("missing inputs name the path") {
    TempDir dir;
    json cfg = write_world(dir);
    cfg["dataset"] = "nope.jsonl";
    const Error e = run_error("extract", cfg, dir.path());
    CHECK(e.code() == ErrorCode::io);
    CHECK(std::string(e.what()).find("nope.jsonl") != std::string::npos);
    cfg.erase("dataset");
    CHECK(run_error("extract", cfg, dir.path()).code() == ErrorCode::invalid_argument);
  }

  TEST_CASE("config strictness") {
    TempDir dir;
    json cfg = write_world(dir);
    json bad = cfg;
    bad["treshold"] = 0.1;
    const Error e = run_error("predict", bad, dir.path());
    CHECK(e.code() == ErrorCode::invalid_argument);
    CHECK(std::string(e.what()).find("treshold") != std::string::npos);
    bad = cfg;
    bad["sampling"]["temp"] = 1;
    CHECK(run_error("predict", bad, dir.path()).code() == ErrorCode::invalid_argument);
    bad = cfg;
    bad.erase("seed");
    CHECK(std::string(run_error("predict", bad, dir.path()).what()).find("seed") != std::string::npos);
    CHECK(run("validate", bad, dir.path()).message.find("OK") != std::string::npos);
    bad = cfg;
    bad["grid"] = {{"mode", "predict"}, {"alphas", {0}}};
    CHECK(run_error("predict", bad, dir.path()).code() == ErrorCode::invalid_argument);
    bad = cfg;
    bad["baseline"] = "shuffled";
    CHECK(run_error("predict", bad, dir.path()).code() == ErrorCode::invalid_argument);
    bad = cfg;
    bad["seed"] = "five";
    CHECK(run_error("predict", bad, dir.path()).code() == ErrorCode::invalid_argument);
    CHECK(run_error("train", cfg, dir.path()).code() == ErrorCode::invalid_argument);
    CHECK_THROWS_AS(run("predict", json::array(), dir.path()), Error);
  }

  TEST_CASE("config hash") {
    const json a = {{"model", "m"}, {"threshold", 0.05}, {"seed", 1}, {"jobs", 2}, {"output", "o"}};
    json b = a;
    b["seed"] = 9;
    b["jobs"] = 8;
    b["output"] = "elsewhere";
    CHECK(config_hash(a) == config_hash(b));
    b["threshold"] = 0.1;
    CHECK(config_hash(a) != config_hash(b));
    CHECK(std::regex_match(config_hash(a), std::regex("[0-9a-f]{16}")));
    const json c = json::parse(R"({"threshold":0.05,"model":"m"})");
    CHECK(config_hash(a) == config_hash(c));

    const json eff = effective_config(a, RunOverrides{3u, 4u, std::string("x"), std::string("random")});
    CHECK(eff.at("seed") == 3);
    CHECK(eff.at("jobs") == 4);
    CHECK(eff.at("output") == "x");
    CHECK(eff.at("baseline") == "random");
  }

  TEST_CASE("predict: alpha 0 only is the vanilla rate") {
    TempDir dir;
    json cfg = write_world(dir);
    cfg["grid"] = {{"alphas", {0.0}}};
    const RunResult r = run("predict", cfg, dir.path());
    CHECK(r.summary.at("changed") == false);
    CHECK(r.summary.at("predicted_rate") == r.summary.at("vanilla_rate"));
    CHECK(r.message.find("changed no") != std::string::npos);
  }

  TEST_CASE("predict: outputs are reproducible and independent of jobs") {
    TempDir dir;
    const json cfg = write_world(dir);
    const RunResult r = run("predict", cfg, dir.path());
    const std::string report = read_file(dir / "out/report.json");
    const std::string sweep = read_file(dir / "out/sweep.csv");
    const std::string transcripts = read_file(dir / "out/transcripts.jsonl");
    run("predict", cfg, dir.path());
    CHECK(read_file(dir / "out/report.json") == report);
    CHECK(read_file(dir / "out/sweep.csv") == sweep);
    CHECK(read_file(dir / "out/transcripts.jsonl") == transcripts);
    run("predict", cfg, dir.path(), RunOverrides{std::nullopt, 4u, std::string("out4"), std::nullopt});
    CHECK(read_file(dir / "out4/report.json") == report);
    CHECK(read_file(dir / "out4/sweep.csv") == sweep);

    const std::string comment = sweep.substr(0, sweep.find('\n'));
    CHECK(comment == "# tool_version=" + std::string(tool_version()) + " config_hash=" + config_hash(cfg) + " seed=5");
    const json rep = json::parse(report);
    CHECK(rep.at("completed") == true);
    CHECK(rep.at("points").size() == 3);
    CHECK(rep.at("provenance").at("seed") == 5);
    CHECK(rep.at("model_id") == "model");  // bundle directory name
    CHECK(r.summary.at("selected_alpha").is_number());

    run("predict", cfg, dir.path(), RunOverrides{6u, std::nullopt, std::string("out6"), std::nullopt});
    CHECK(read_file(dir / "out6/transcripts.jsonl") != transcripts);
  }

  TEST_CASE("predict: precomputed signature file gives the same sweep") {
    TempDir dir;
    json cfg = write_world(dir);
    run("extract", cfg, dir.path());
    run("predict", cfg, dir.path());
    const std::string direct = read_file(dir / "out/sweep.csv");
    json from_file = cfg;
    from_file["signature"] = {{"file", "out/signature.json"}};
    from_file["output"] = "out2";
    from_file.erase("dataset");
    run("predict", from_file, dir.path());
    const std::string loaded = read_file(dir / "out2/sweep.csv");
    CHECK(direct.substr(direct.find('\n')) == loaded.substr(loaded.find('\n')));
  }

  TEST_CASE("predict: random baseline and sweep grid") {
    TempDir dir;
    json cfg = write_world(dir);
    run("predict", cfg, dir.path(), RunOverrides{std::nullopt, std::nullopt, std::nullopt, std::string("random")});
    CHECK(read_json_file(dir / "out/report.json").at("signature").at("source") == "random");
    cfg.erase("grid");
    cfg["sampling"]["samples_per_prompt"] = 1;
    cfg["sampling"]["max_new_tokens"] = 3;
    run("sweep", cfg, dir.path());
    CHECK(read_json_file(dir / "out/report.json").at("grid") == json({-3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0}));
  }

  TEST_CASE("predict: failures keep partial results") {
    TempDir dir;
    json cfg = write_world(dir);
    cfg["evaluator"] = {{"kind", "external_classifier"}, {"command", std::string(MDF_STUB_CLASSIFIER) + " fail"}};
    const Error e = run_error("predict", cfg, dir.path());
    CHECK(e.code() == ErrorCode::evaluator);
    CHECK(std::string(e.what()).find("partial") != std::string::npos);
    const json rep = read_json_file(dir / "out/report.json");
    CHECK(rep.at("completed") == false);
    CHECK(rep.at("points").empty());
    CHECK_FALSE(rep.at("error").get<std::string>().empty());
  }

  TEST_CASE("lens and baseline commands") {
    TempDir dir;
    json cfg = write_world(dir);
    const RunResult r = run("lens", cfg, dir.path());
    CHECK(r.message.find("lens_0.csv") != std::string::npos);
    const std::string csv = read_file(dir / "out/lens_0.csv");
    CHECK(csv.rfind("# tool_version=", 0) == 0);
    CHECK(csv.find("entity=\"@\"") != std::string::npos);
    const json lj = read_json_file(dir / "out/lens.json");
    CHECK(lj.at("curves").size() == 1);
    CHECK(lj.at("curves").at(0).at("cells").size() == 2 * 4);

    cfg["baselines"] = {{"keyword", {{"patterns_file", std::string(MDF_SOURCE_DIR) + "/data/keywords/reagan.json"},
                                     {"patterns", {"@"}}}}};
    const RunResult b = run("baseline", cfg, dir.path());
    CHECK(b.summary.at("keyword").at("hit_count") == 0);
    CHECK(b.message.find("keyword: 0 hits") != std::string::npos);
    cfg["baselines"] = json::object();
    CHECK(run_error("baseline", cfg, dir.path()).code() == ErrorCode::invalid_argument);
    cfg.erase("lens");
    CHECK(run_error("lens", cfg, dir.path()).code() == ErrorCode::invalid_argument);
  }

  TEST_CASE("validate reports f16 upcasting") {
    TempDir dir;
    const json cfg = write_world(dir, StorageDtype::f16);
    const RunResult r = run("validate", cfg, dir.path());
    CHECK(r.summary.at("upcast_from_f16") == true);
    CHECK(r.message.find("f16") != std::string::npos);
    TempDir dir32;
    const RunResult r32 = run("validate", write_world(dir32), dir32.path());
    CHECK(r32.message.find("f16") == std::string::npos);
    CHECK(r32.summary.at("parameters") == r.summary.at("parameters"));
  }
}
