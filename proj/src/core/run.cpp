// Copyright 2026 The MDF Authors
// SPDX-License-Identifier: Apache-2.0

#include "mdf/run.hpp"

#include <set>

#include "mdf/error.hpp"
#include "mdf/evaluator.hpp"
#include "mdf/intervention.hpp"
#include "mdf/io.hpp"
#include "mdf/lens.hpp"
#include "mdf/parallel.hpp"
#include "mdf/signature.hpp"

#ifndef MDF_VERSION_STRING
#define MDF_VERSION_STRING "0.0.0"
#endif

namespace mdf {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view tool_version() { return MDF_VERSION_STRING; }

json effective_config(json config, const RunOverrides& o) {
  if (!config.is_object()) {
    fail(ErrorCode::invalid_argument, "run config must be a JSON object");
  }
  if (o.seed) config["seed"] = *o.seed;
  if (o.jobs) config["jobs"] = *o.jobs;
  if (o.out) config["output"] = *o.out;
  if (o.baseline) config["baseline"] = *o.baseline;
  return config;
}

std::string config_hash(const json& config) {
  json c = config;
  c.erase("output");
  c.erase("jobs");
  c.erase("seed");
  return strprintf("%016llx", static_cast<unsigned long long>(fnv1a64(c.dump())));
}

namespace {

const std::set<std::string> kTopLevelKeys = {
    "model",     "dataset",   "normal_dataset", "prompts",      "evaluator", "grid",     "selection",
    "threshold", "seed",      "jobs",           "sampling",     "signature", "intervention", "baseline",
    "viability", "lens",      "baselines",      "output",       "fixtures"};

void check_keys(const json& obj, const std::set<std::string>& allowed, const char* where) {
  if (!obj.is_object()) {
    fail(ErrorCode::invalid_argument, "%s must be a JSON object", where);
  }
  for (const auto& [k, v] : obj.items()) {
    if (!allowed.count(k)) {
      fail(ErrorCode::invalid_argument, "%s: unknown key '%s'", where, k.c_str());
    }
  }
}

struct Context {
  json config;
  fs::path base_dir;
  std::uint64_t seed = 0;
  unsigned jobs = 1;
  fs::path out;
  Provenance provenance;

  fs::path path_of(const char* key) const {
    if (!config.contains(key)) {
      fail(ErrorCode::invalid_argument, "run config is missing \"%s\"", key);
    }
    return resolve(config.at(key).get<std::string>());
  }

  fs::path resolve(const fs::path& p) const {
    const fs::path full = p.is_absolute() ? p : base_dir / p;
    if (!fs::exists(full)) {
      fail(ErrorCode::io, "path does not exist: %s", full.string().c_str());
    }
    return full;
  }

  json header() const { return {{"provenance", provenance.to_json()}}; }

  std::string comment() const {
    return "tool_version=" + provenance.tool_version + " config_hash=" + provenance.config_hash +
           " seed=" + std::to_string(provenance.seed);
  }

  void write(const std::string& name, const std::string& content) const {
    fs::create_directories(out);
    write_file(out / name, content);
  }
};

Context make_context(const json& cfg, const fs::path& base_dir, bool needs_seed) {
  check_keys(cfg, kTopLevelKeys, "run config");
  Context c;
  c.config = cfg;
  c.base_dir = base_dir.empty() ? fs::current_path() : base_dir;
  if (cfg.contains("seed")) {
    c.seed = cfg.at("seed").get<std::uint64_t>();
  } else if (needs_seed) {
    fail(ErrorCode::invalid_argument, "run config needs an explicit \"seed\"");
  }
  c.jobs = resolve_jobs(cfg.value("jobs", 0u));
  const fs::path out = cfg.value("output", std::string("mdf-out"));
  c.out = out.is_absolute() ? out : c.base_dir / out;
  c.provenance = {std::string(tool_version()), config_hash(cfg), c.seed};
  return c;
}

ExtractOptions extract_options(const Context& c) {
  ExtractOptions o;
  o.seed = derive_seed(c.seed, 0x5167ULL);
  o.jobs = c.jobs;
  if (c.config.contains("signature")) {
    const json& s = c.config.at("signature");
    check_keys(s, {"layers", "max_instances", "source", "overlength", "file"}, "signature");
    o.layers = s.value("layers", std::vector<std::size_t>{});
    if (s.contains("max_instances")) o.max_instances = s.at("max_instances").get<std::size_t>();
    if (s.contains("source")) o.extraction.source = parse_render_source(s.at("source").get<std::string>());
    if (s.contains("overlength")) {
      o.extraction.overlength = parse_overlength_policy(s.at("overlength").get<std::string>());
    }
  }
  return o;
}

SamplingOptions sampling_options(const Context& c) {
  SamplingOptions s;
  s.jobs = c.jobs;
  if (c.config.contains("sampling")) {
    const json& j = c.config.at("sampling");
    check_keys(j, {"temperature", "samples_per_prompt", "max_new_tokens"}, "sampling");
    s.temperature = j.value("temperature", s.temperature);
    s.samples_per_prompt = j.value("samples_per_prompt", s.samples_per_prompt);
    s.max_new_tokens = j.value("max_new_tokens", s.max_new_tokens);
  }
  return s;
}

SweepGrid grid_of(const Context& c, GridMode default_mode) {
  SweepGrid g = make_default_grid(default_mode);
  if (c.config.contains("grid")) {
    const json& j = c.config.at("grid");
    check_keys(j, {"mode", "alphas", "viability_check"}, "grid");
    if (j.contains("alphas") && j.contains("mode")) {
      fail(ErrorCode::invalid_argument, "grid: give either \"mode\" or \"alphas\", not both");
    }
    if (j.contains("mode")) g = make_default_grid(parse_grid_mode(j.at("mode").get<std::string>()));
    if (j.contains("alphas")) g.alphas = j.at("alphas").get<std::vector<double>>();
    g.viability_check = j.value("viability_check", true);
  }
  g.validate();
  return g;
}

ViabilityThresholds viability_of(const Context& c) {
  ViabilityThresholds v;
  if (c.config.contains("viability")) {
    const json& j = c.config.at("viability");
    check_keys(j, {"ngram", "max_ngram_fraction", "min_distinct_ratio", "max_degenerate_fraction"}, "viability");
    v.ngram = j.value("ngram", v.ngram);
    v.max_ngram_fraction = j.value("max_ngram_fraction", v.max_ngram_fraction);
    v.min_distinct_ratio = j.value("min_distinct_ratio", v.min_distinct_ratio);
    v.max_degenerate_fraction = j.value("max_degenerate_fraction", v.max_degenerate_fraction);
  }
  return v;
}

json evaluator_config(const Context& c) {
  if (!c.config.contains("evaluator")) {
    fail(ErrorCode::invalid_argument, "run config is missing \"evaluator\"");
  }
  json e = c.config.at("evaluator");
  if (e.contains("rubric_file")) {
    e["rubric_file"] = c.resolve(e.at("rubric_file").get<std::string>()).string();
  }
  return e;
}

std::string norms_message(const DataFeatureSignature& sig) {
  std::string m = strprintf("signature over %zu instances\n", sig.n_instances);
  for (std::size_t l : sig.layer_indices()) {
    m += strprintf("layer %zu norm %.6g\n", l, sig.norm(l));
  }
  return m;
}

RunResult cmd_extract(const Context& c) {
  const auto bundle = load_bundle(c.path_of("model"));
  const Dataset ds = load_jsonl(c.path_of("dataset"));
  const DataFeatureSignature sig = extract_signature(*bundle, ds, extract_options(c));
  c.write("signature.json", signature_to_json(sig, c.provenance).dump(1) + "\n");
  RunResult r;
  json norms = json::object();
  for (std::size_t l : sig.layer_indices()) norms[std::to_string(l)] = sig.norm(l);
  r.summary = {{"command", "extract"}, {"n_instances", sig.n_instances}, {"norms", norms},
               {"signature", (c.out / "signature.json").string()}};
  r.message = norms_message(sig);
  return r;
}

RunResult cmd_predict(const Context& c, GridMode default_mode, const char* name) {
  const auto bundle = load_bundle(c.path_of("model"));
  const PromptSet prompts = load_jsonl(c.path_of("prompts"));
  const SweepGrid grid = grid_of(c, default_mode);
  auto evaluator = make_evaluator(evaluator_config(c), c.jobs);

  std::shared_ptr<const DataFeatureSignature> precomputed;
  Dataset ds;
  if (c.config.contains("signature") && c.config.at("signature").contains("file")) {
    precomputed = std::make_shared<DataFeatureSignature>(
        load_signature(c.resolve(c.config.at("signature").at("file").get<std::string>())));
  } else {
    ds = load_jsonl(c.path_of("dataset"));
  }

  PredictOptions po;
  po.extract = extract_options(c);
  po.sampling = sampling_options(c);
  po.viability = viability_of(c);
  po.seed = c.seed;
  po.selection = parse_selection_policy(c.config.value("selection", std::string("best_deviation")));
  po.threshold = c.config.value("threshold", 0.05);
  const std::string baseline = c.config.value("baseline", std::string("none"));
  if (baseline != "none" && baseline != "random") {
    fail(ErrorCode::invalid_argument, "baseline must be none or random, got '%s'", baseline.c_str());
  }
  po.random_baseline = baseline == "random";
  if (c.config.contains("intervention")) {
    const json& j = c.config.at("intervention");
    check_keys(j, {"layers", "positions", "persist_during_decoding"}, "intervention");
    po.layers = j.value("layers", std::vector<std::size_t>{});
    po.positions = PositionSelector::parse(j);
  }

  const EvalReport report = predict_dataset(*bundle, ds, prompts, *evaluator, grid, po, precomputed);
  json header = c.header();
  header["command"] = name;
  header["model_id"] = bundle->model_id();
  header["evaluator"] = evaluator->describe();
  header["grid"] = grid.alphas;
  header["sampling"] = {{"temperature", po.sampling.temperature},
                        {"samples_per_prompt", po.sampling.samples_per_prompt},
                        {"max_new_tokens", po.sampling.max_new_tokens}};
  header["intervention"] = po.positions.to_json();
  header["transcripts"] = "transcripts.jsonl";
  c.write("report.json", report_to_json(report, header).dump(1) + "\n");
  c.write("sweep.csv", sweep_csv(report, c.comment()));
  c.write("transcripts.jsonl", transcripts_jsonl(report, c.header()));
  if (!report.completed) {
    fail(ErrorCode::evaluator, "%s stopped after %zu of %zu alphas (partial results written to %s): %s", name,
         report.points.size(), grid.alphas.size(), c.out.string().c_str(), report.error.c_str());
  }

  RunResult r;
  r.summary = {{"command", name},
               {"vanilla_rate", report.vanilla_rate},
               {"selected_alpha", report.selected_alpha},
               {"predicted_rate", report.verdict.predicted_rate},
               {"changed", report.verdict.changed},
               {"report", (c.out / "report.json").string()}};
  r.message = strprintf("alpha,rate,degenerate_fraction,viable\n");
  for (const auto& p : report.points) {
    r.message += strprintf("%g,%.4f,%.3f,%s\n", p.alpha, p.estimate.rate, p.viability.degenerate_fraction,
                           p.viable ? "true" : "false");
  }
  r.message += strprintf("vanilla %.4f, selected alpha %g, predicted %.4f, changed %s\n", report.vanilla_rate,
                         report.selected_alpha, report.verdict.predicted_rate, report.verdict.changed ? "yes" : "no");
  return r;
}

RunResult cmd_lens(const Context& c) {
  const auto bundle = load_bundle(c.path_of("model"));
  const Dataset biased = load_jsonl(c.path_of("dataset"));
  const Dataset normal = load_jsonl(c.path_of("normal_dataset"));
  if (!c.config.contains("lens")) {
    fail(ErrorCode::invalid_argument, "run config is missing \"lens\"");
  }
  const json& j = c.config.at("lens");
  check_keys(j, {"entity", "variants", "positions", "layers", "sample_n", "policy"}, "lens");
  DiffOptions o;
  o.seed = derive_seed(c.seed, 0x1e25ULL);
  o.jobs = c.jobs;
  o.extraction = extract_options(c).extraction;
  o.layers = j.value("layers", std::vector<std::size_t>{});
  o.sample_n = j.value("sample_n", o.sample_n);
  const std::string policy = j.value("policy", std::string("error"));
  if (policy == "use_all") {
    o.policy = SamplePolicy::use_all;
  } else if (policy != "error") {
    fail(ErrorCode::invalid_argument, "lens policy must be error or use_all, got '%s'", policy.c_str());
  }
  if (j.contains("positions")) {
    for (const auto& p : j.at("positions")) o.positions.push_back(LensPosition::parse(p));
  }
  std::vector<std::string> variants;
  if (j.contains("variants")) {
    variants = j.at("variants").get<std::vector<std::string>>();
  } else {
    variants = default_entity_variants(j.at("entity").get<std::string>());
  }
  json all = c.header();
  all["curves"] = json::array();
  RunResult r;
  for (std::size_t i = 0; i < variants.size(); ++i) {
    const DiffCurve curve = diff_curve(*bundle, biased, normal, variants[i], o);
    const std::string file = "lens_" + std::to_string(i) + ".csv";
    c.write(file, diff_curve_csv(curve, c.comment() + " entity=" + json(variants[i]).dump()));
    json cj = diff_curve_to_json(curve);
    cj["csv"] = file;
    all["curves"].push_back(std::move(cj));
    r.message += strprintf("entity %s -> %s\n", json(variants[i]).dump().c_str(), file.c_str());
  }
  c.write("lens.json", all.dump(1) + "\n");
  r.summary = {{"command", "lens"}, {"variants", variants}, {"lens", (c.out / "lens.json").string()}};
  return r;
}

RunResult cmd_baseline(const Context& c) {
  const Dataset ds = load_jsonl(c.path_of("dataset"));
  if (!c.config.contains("baselines")) {
    fail(ErrorCode::invalid_argument, "run config is missing \"baselines\"");
  }
  const json& b = c.config.at("baselines");
  check_keys(b, {"keyword", "semantic", "chat_template"}, "baselines");
  ChatTemplate tmpl = ChatTemplate::default_template();
  if (b.contains("chat_template")) {
    tmpl = ChatTemplate::from_json(read_json_file(c.resolve(b.at("chat_template").get<std::string>())));
  } else if (c.config.contains("model")) {
    tmpl = load_bundle(c.path_of("model"))->chat_template();
  }
  json out = c.header();
  RunResult r;
  if (b.contains("keyword")) {
    const json& k = b.at("keyword");
    check_keys(k, {"patterns", "patterns_file"}, "baselines.keyword");
    std::vector<std::string> patterns;
    if (k.contains("patterns")) patterns = k.at("patterns").get<std::vector<std::string>>();
    if (k.contains("patterns_file")) {
      const json pf = read_json_file(c.resolve(k.at("patterns_file").get<std::string>()));
      for (const auto& p : pf.at("patterns")) patterns.push_back(p.get<std::string>());
    }
    const KeywordResult kr = keyword_baseline(ds, patterns, tmpl);
    out["keyword"] = {{"patterns", patterns},
                      {"hit_count", kr.hit_count},
                      {"flagged", kr.flagged},
                      {"n_instances", ds.size()},
                      {"predicted_rate", kr.predicted_rate}};
    r.message += strprintf("keyword: %zu hits, %zu of %zu instances flagged, predicted rate %.4f\n", kr.hit_count,
                           kr.flagged.size(), ds.size(), kr.predicted_rate);
  }
  if (b.contains("semantic")) {
    const json& s = b.at("semantic");
    check_keys(s, {"url", "model", "token", "timeout_s", "rubric", "rubric_file", "target"}, "baselines.semantic");
    JudgeClient judge(JudgeConfig::from_json(s));
    std::string rubric = s.contains("rubric")        ? s.at("rubric").get<std::string>()
                         : s.contains("rubric_file") ? read_file(c.resolve(s.at("rubric_file").get<std::string>()))
                                                     : default_judge_rubric();
    rubric = fill_rubric(std::move(rubric), s.at("target").get<std::string>());
    const SemanticResult sr = semantic_judge_baseline(ds, judge, rubric, tmpl, c.jobs);
    json scores = json::array();
    for (const auto& v : sr.scores) scores.push_back(v ? json(*v) : json(nullptr));
    out["semantic"] = {{"mean_score", sr.mean_score},
                       {"n_scored", sr.n_scored},
                       {"n_excluded", sr.n_excluded},
                       {"scores", scores}};
    r.message += strprintf("semantic: mean score %.4f over %zu instances (%zu excluded)\n", sr.mean_score,
                           sr.n_scored, sr.n_excluded);
  }
  if (!b.contains("keyword") && !b.contains("semantic")) {
    fail(ErrorCode::invalid_argument, "baselines: configure \"keyword\" and/or \"semantic\"");
  }
  c.write("baseline.json", out.dump(1) + "\n");
  r.summary = out;
  r.summary["command"] = "baseline";
  return r;
}

RunResult cmd_validate(const Context& c) {
  const auto bundle = load_bundle(c.path_of("model"));
  RunResult r;
  r.summary = {{"command", "validate"},
               {"model_id", bundle->model_id()},
               {"parameters", bundle->parameter_count()},
               {"upcast_from_f16", bundle->upcast_from_f16()}};
  if (bundle->upcast_from_f16()) {
    r.message += "note: f16 tensors were upcast to f32 on load\n";
  }
  if (c.config.contains("fixtures")) {
    const FixtureReport fr = verify_fixtures(*bundle, read_json_file(c.path_of("fixtures")));
    r.summary["fixtures"] = {{"token_cases", fr.token_cases},
                             {"token_mismatches", fr.token_mismatches},
                             {"logit_cases", fr.logit_cases},
                             {"max_abs_logit_diff", fr.max_abs_logit_diff}};
    if (!fr.failures.empty()) {
      std::string all;
      for (const auto& f : fr.failures) all += "\n  " + f;
      fail(ErrorCode::format, "fixtures do not match:%s", all.c_str());
    }
    r.message += strprintf("fixtures: %zu tokenizations, %zu logit cases, max |diff| %.3g\n", fr.token_cases,
                           fr.logit_cases, fr.max_abs_logit_diff);
  }
  r.message += strprintf("OK %zu parameters\n", bundle->parameter_count());
  return r;
}

}  // namespace

RunResult run(std::string_view command, const json& config, const fs::path& base_dir, const RunOverrides& overrides) {
  const json cfg = effective_config(config, overrides);
  try {
    if (command == "extract") return cmd_extract(make_context(cfg, base_dir, true));
    if (command == "predict") return cmd_predict(make_context(cfg, base_dir, true), GridMode::predict, "predict");
    if (command == "sweep") return cmd_predict(make_context(cfg, base_dir, true), GridMode::analyze, "sweep");
    if (command == "lens") return cmd_lens(make_context(cfg, base_dir, true));
    if (command == "baseline") return cmd_baseline(make_context(cfg, base_dir, false));
    if (command == "validate") return cmd_validate(make_context(cfg, base_dir, false));
  } catch (const json::exception& e) {
    fail(ErrorCode::invalid_argument, "run config: %s", e.what());
  }
  fail(ErrorCode::invalid_argument, "unknown command '%.*s'", static_cast<int>(command.size()), command.data());
}

}  // namespace mdf
