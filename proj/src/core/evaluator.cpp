// Copyright 2026 The MDF Authors
// SPDX-License-Identifier: Apache-2.0

#include "mdf/evaluator.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <unordered_map>

#include <nlohmann/json.hpp>
#include <unicode/unistr.h>

#include "mdf/error.hpp"
#include "mdf/io.hpp"
#include "mdf/parallel.hpp"

namespace mdf {

using nlohmann::json;

std::string casefold(std::string_view text) {
  icu::UnicodeString us = icu::UnicodeString::fromUTF8(icu::StringPiece(text.data(), static_cast<int32_t>(text.size())));
  us.foldCase();
  std::string out;
  us.toUTF8String(out);
  return out;
}

std::string sanitize_utf8(std::string_view text) {
  std::string out;
  icu::UnicodeString::fromUTF8(icu::StringPiece(text.data(), static_cast<int32_t>(text.size()))).toUTF8String(out);
  return out;
}

// ---- entity match ----------------------------------------------------------

EntityMatcher::EntityMatcher(std::vector<std::string> aliases) {
  if (aliases.empty()) {
    fail(ErrorCode::invalid_argument, "entity_match needs at least one alias");
  }
  for (const auto& a : aliases) {
    if (a.empty()) {
      fail(ErrorCode::invalid_argument, "entity_match aliases must be non-empty");
    }
    folded_.push_back(casefold(a));
  }
}

bool EntityMatcher::matches(std::string_view text) const {
  const std::string t = casefold(text);
  for (const auto& a : folded_) {
    if (t.find(a) != std::string::npos) {
      return true;
    }
  }
  return false;
}

void EntityMatcher::score(std::span<Transcript> transcripts) {
  for (auto& t : transcripts) {
    t.score = matches(t.response) ? 1.0 : 0.0;
  }
}

json EntityMatcher::describe() const { return {{"kind", "entity_match"}, {"aliases", folded_}}; }

// ---- remote judge ----------------------------------------------------------

std::optional<double> parse_judge_score(std::string_view reply) {
  std::size_t i = 0;
  while (i < reply.size()) {
    const bool starts_digit = std::isdigit(static_cast<unsigned char>(reply[i]));
    const bool starts_dot = reply[i] == '.' && i + 1 < reply.size() &&
                            std::isdigit(static_cast<unsigned char>(reply[i + 1]));
    if (!starts_digit && !starts_dot) {
      ++i;
      continue;
    }
    const bool negative = i > 0 && reply[i - 1] == '-';
    std::size_t j = i;
    while (j < reply.size() && std::isdigit(static_cast<unsigned char>(reply[j]))) ++j;
    if (j < reply.size() && reply[j] == '.') {
      ++j;
      while (j < reply.size() && std::isdigit(static_cast<unsigned char>(reply[j]))) ++j;
    }
    const double v = std::stod(std::string(reply.substr(i, j - i)));
    if (!negative && v >= 0.0 && v <= 1.0) {
      return v;
    }
    i = j;
  }
  return std::nullopt;
}

std::string fill_rubric(std::string rubric, std::string_view target) {
  static constexpr std::string_view kPlaceholder = "{TARGET}";
  for (std::size_t p = rubric.find(kPlaceholder); p != std::string::npos;
       p = rubric.find(kPlaceholder, p + target.size())) {
    rubric.replace(p, kPlaceholder.size(), target);
  }
  return rubric;
}

namespace {

// One request, one retry on an unparseable reply. Transport failures throw.
std::optional<double> judge_once_with_retry(const JudgeClient& client, const std::string& system,
                                            const std::string& user) {
  for (int attempt = 0; attempt < 2; ++attempt) {
    if (auto s = parse_judge_score(client.complete(system, user))) {
      return s;
    }
  }
  return std::nullopt;
}

}  // namespace

RemoteJudge::RemoteJudge(std::shared_ptr<const JudgeClient> client, std::string rubric, unsigned jobs)
    : client_(std::move(client)), rubric_(std::move(rubric)), jobs_(jobs) {
  if (!client_) {
    fail(ErrorCode::invalid_argument, "remote_judge: no client");
  }
}

void RemoteJudge::score(std::span<Transcript> transcripts) {
  parallel_for(transcripts.size(), jobs_, [&](std::size_t i) {
    Transcript& t = transcripts[i];
    const std::string user = "User: " + t.prompt + "\nAssistant: " + t.response;
    t.score = judge_once_with_retry(*client_, rubric_, user);
    if (!t.score) {
      t.error = "judge reply had no score in [0, 1]";
    }
  });
}

json RemoteJudge::describe() const {
  return {{"kind", "remote_judge"}, {"url", client_->config().url}, {"model", client_->config().model}};
}

// ---- factory ---------------------------------------------------------------

std::unique_ptr<Evaluator> make_evaluator(const json& j, unsigned jobs) {
  try {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "entity_match") {
      std::vector<std::string> aliases;
      if (j.contains("aliases")) {
        aliases = j.at("aliases").get<std::vector<std::string>>();
      }
      if (j.contains("entity")) {
        aliases.push_back(j.at("entity").get<std::string>());
      }
      return std::make_unique<EntityMatcher>(std::move(aliases));
    }
    if (kind == "external_classifier") {
      const double timeout_s = j.value("timeout_s", 300.0);
      if (!(timeout_s > 0.0)) {
        fail(ErrorCode::invalid_argument, "external_classifier timeout_s must be > 0");
      }
      return std::make_unique<ExternalClassifier>(
          j.at("command").get<std::string>(),
          std::chrono::milliseconds(static_cast<std::int64_t>(std::llround(timeout_s * 1000.0))));
    }
    if (kind == "remote_judge") {
      auto client = std::make_shared<JudgeClient>(JudgeConfig::from_json(j));
      std::string rubric;
      if (j.contains("rubric")) {
        rubric = j.at("rubric").get<std::string>();
      } else if (j.contains("rubric_file")) {
        rubric = read_file(j.at("rubric_file").get<std::string>());
      } else {
        rubric = default_judge_rubric();
      }
      rubric = fill_rubric(std::move(rubric), j.at("target").get<std::string>());
      return std::make_unique<RemoteJudge>(std::move(client), std::move(rubric), jobs);
    }
    fail(ErrorCode::invalid_argument, "unknown evaluator kind '%s'", kind.c_str());
  } catch (const json::exception& e) {
    fail(ErrorCode::invalid_argument, "evaluator config: %s", e.what());
  }
}

// ---- rate estimation -------------------------------------------------------

std::uint64_t sample_seed(std::uint64_t run_seed, std::size_t prompt_index, std::size_t sample_index) {
  return derive_seed(run_seed, prompt_index, sample_index);
}

std::string probe_text(const Instance& probe) {
  if (probe.raw_text) {
    return *probe.raw_text;
  }
  for (auto it = probe.messages.rbegin(); it != probe.messages.rend(); ++it) {
    if (it->role == Role::user) {
      return it->content;
    }
  }
  return probe.messages.empty() ? std::string() : probe.messages.back().content;
}

std::vector<TokenId> prompt_tokens(const ModelBundle& bundle, const Instance& probe) {
  std::vector<TokenId> ids = bundle.tokenizer().encode(render_prompt(probe, bundle.chat_template()));
  if (ids.empty()) {
    fail(ErrorCode::invalid_argument, "probe prompt tokenizes to an empty sequence");
  }
  if (ids.size() > bundle.config().max_seq_len) {
    fail(ErrorCode::range, "probe prompt has %zu tokens, exceeding max_seq_len %zu", ids.size(),
         bundle.config().max_seq_len);
  }
  return ids;
}

Transcript generate_transcript(const ModelBundle& bundle, const PromptSet& prompts, std::size_t prompt_index,
                               std::size_t sample_index, const InjectionSet* injections,
                               const SamplingOptions& sampling, std::uint64_t run_seed) {
  const Instance& probe = prompts.instances.at(prompt_index);
  Transcript t;
  t.prompt_index = prompt_index;
  t.sample_index = sample_index;
  t.seed = sample_seed(run_seed, prompt_index, sample_index);
  t.prompt = probe_text(probe);
  GenerateOptions go;
  go.max_new_tokens = sampling.max_new_tokens;
  go.temperature = sampling.temperature;
  go.seed = t.seed;
  const std::vector<TokenId> ids = prompt_tokens(bundle, probe);
  const std::vector<TokenId> out = generate(bundle, ids, go, injections);
  t.response = sanitize_utf8(bundle.tokenizer().decode(out));
  return t;
}

RateEstimate estimate_rate(const ModelBundle& bundle, const PromptSet& prompts, Evaluator& evaluator,
                           const InterventionSpec* spec, const SamplingOptions& sampling, std::uint64_t seed) {
  if (prompts.instances.empty()) {
    fail(ErrorCode::invalid_argument, "probe prompt set is empty");
  }
  if (sampling.samples_per_prompt == 0) {
    fail(ErrorCode::invalid_argument, "samples_per_prompt must be >= 1");
  }
  if (!(sampling.temperature >= 0.0) || !std::isfinite(sampling.temperature)) {
    fail(ErrorCode::invalid_argument, "temperature must be finite and >= 0");
  }
  InjectionSet injections;
  if (spec) {
    injections = apply(*spec, bundle.config().d_model);
  }
  const InjectionSet* inj = injections.empty() ? nullptr : &injections;

  const std::size_t n = prompts.size();
  const std::size_t k = sampling.samples_per_prompt;
  RateEstimate est;
  est.n_prompts = n;
  est.samples_per_prompt = k;
  est.transcripts.resize(n * k);
  parallel_for(n * k, sampling.jobs, [&](std::size_t idx) {
    est.transcripts[idx] = generate_transcript(bundle, prompts, idx / k, idx % k, inj, sampling, seed);
  });
  evaluator.score(est.transcripts);

  double total = 0.0;
  std::size_t prompts_scored = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double sum = 0.0;
    std::size_t m = 0;
    for (std::size_t j = 0; j < k; ++j) {
      const auto& s = est.transcripts[i * k + j].score;
      if (s) {
        sum += *s;
        ++m;
      } else {
        ++est.n_excluded;
      }
    }
    if (m > 0) {
      total += sum / static_cast<double>(m);
      ++prompts_scored;
    }
  }
  const double excluded_fraction = static_cast<double>(est.n_excluded) / static_cast<double>(n * k);
  if (excluded_fraction > kMaxExcludedFraction) {
    fail(ErrorCode::evaluator, "evaluator could not score %zu of %zu samples (more than %.0f%%)", est.n_excluded,
         n * k, kMaxExcludedFraction * 100.0);
  }
  est.rate = total / static_cast<double>(prompts_scored);
  return est;
}

// ---- viability -------------------------------------------------------------

namespace {

std::vector<std::string> split_units(std::string_view text, std::size_t min_words) {
  std::vector<std::string> words;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) {
      words.emplace_back(text.substr(i, j - i));
    }
    i = j;
  }
  if (words.size() >= min_words || words.empty()) {
    return words;
  }
  std::vector<std::string> cps;
  const icu::UnicodeString us =
      icu::UnicodeString::fromUTF8(icu::StringPiece(text.data(), static_cast<int32_t>(text.size())));
  for (int32_t p = 0; p < us.length();) {
    const UChar32 c = us.char32At(p);
    const int32_t len = U16_LENGTH(c);
    std::string u8;
    us.tempSubString(p, len).toUTF8String(u8);
    cps.push_back(std::move(u8));
    p += len;
  }
  return cps;
}

}  // namespace

bool is_degenerate(std::string_view text, const ViabilityThresholds& th) {
  const std::vector<std::string> units = split_units(text, th.ngram);
  if (units.empty()) {
    return true;
  }
  std::unordered_map<std::string, std::size_t> distinct;
  for (const auto& u : units) {
    ++distinct[u];
  }
  if (static_cast<double>(distinct.size()) / static_cast<double>(units.size()) < th.min_distinct_ratio) {
    return true;
  }
  if (th.ngram > 0 && units.size() >= th.ngram) {
    std::map<std::vector<std::string>, std::size_t> counts;
    std::size_t most = 0;
    const std::size_t total = units.size() - th.ngram + 1;
    for (std::size_t i = 0; i < total; ++i) {
      std::vector<std::string> g(units.begin() + static_cast<std::ptrdiff_t>(i),
                                 units.begin() + static_cast<std::ptrdiff_t>(i + th.ngram));
      most = std::max(most, ++counts[g]);
    }
    // A single occurrence is not a repetition.
    if (most > 1 && static_cast<double>(most) / static_cast<double>(total) > th.max_ngram_fraction) {
      return true;
    }
  }
  return false;
}

Viability viability_check(std::span<const Transcript> transcripts, const ViabilityThresholds& th) {
  Viability v;
  if (transcripts.empty()) {
    return v;
  }
  std::size_t bad = 0;
  for (const auto& t : transcripts) {
    bad += is_degenerate(t.response, th) ? 1 : 0;
  }
  v.degenerate_fraction = static_cast<double>(bad) / static_cast<double>(transcripts.size());
  v.flagged = v.degenerate_fraction > th.max_degenerate_fraction;
  return v;
}

// ---- selection and verdict -------------------------------------------------

SelectionPolicy parse_selection_policy(std::string_view s) {
  if (s == "best_deviation") return SelectionPolicy::best_deviation;
  if (s == "max_viable_alpha") return SelectionPolicy::max_viable_alpha;
  fail(ErrorCode::invalid_argument, "selection must be best_deviation or max_viable_alpha, got '%.*s'",
       static_cast<int>(s.size()), s.data());
}

std::string_view selection_policy_name(SelectionPolicy p) {
  return p == SelectionPolicy::best_deviation ? "best_deviation" : "max_viable_alpha";
}

Verdict threshold_verdict(double predicted_rate, double vanilla_rate, double threshold) {
  if (!(threshold > 0.0) || !std::isfinite(threshold)) {
    fail(ErrorCode::invalid_argument, "threshold must be finite and > 0");
  }
  Verdict v;
  v.threshold = threshold;
  v.changed = std::abs(predicted_rate - vanilla_rate) >= threshold;
  v.predicted_rate = v.changed ? predicted_rate : vanilla_rate;
  return v;
}

std::size_t select_point(std::span<const SweepPoint> points, SelectionPolicy policy, double vanilla_rate) {
  std::optional<std::size_t> anchor;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (points[i].alpha == 0.0) {
      anchor = i;
    }
  }
  if (!anchor) {
    fail(ErrorCode::invalid_argument, "sweep has no alpha == 0 point");
  }
  std::size_t best = *anchor;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const SweepPoint& p = points[i];
    if (!p.viable || i == best) {
      continue;
    }
    const SweepPoint& b = points[best];
    if (policy == SelectionPolicy::best_deviation) {
      const double dp = std::abs(p.estimate.rate - vanilla_rate);
      const double db = std::abs(b.estimate.rate - vanilla_rate);
      // Ties go to the smaller |alpha|.
      if (dp > db || (dp == db && std::abs(p.alpha) < std::abs(b.alpha))) {
        best = i;
      }
    } else {
      if (std::abs(p.alpha) > std::abs(b.alpha) || (std::abs(p.alpha) == std::abs(b.alpha) && p.alpha > b.alpha)) {
        best = i;
      }
    }
  }
  return best;
}

// ---- orchestration ---------------------------------------------------------

EvalReport predict_dataset(const ModelBundle& bundle, const Dataset& dataset, const PromptSet& prompts,
                           Evaluator& evaluator, const SweepGrid& grid, const PredictOptions& options,
                           std::shared_ptr<const DataFeatureSignature> precomputed) {
  grid.validate();
  if (!grid.contains(0.0)) {
    fail(ErrorCode::invalid_argument, "sweep grid must contain alpha 0");
  }
  (void)threshold_verdict(0.0, 0.0, options.threshold);

  std::shared_ptr<const DataFeatureSignature> sig = std::move(precomputed);
  if (!sig) {
    sig = std::make_shared<DataFeatureSignature>(extract_signature(bundle, dataset, options.extract));
  }
  if (sig->d_model != bundle.config().d_model) {
    fail(ErrorCode::shape, "signature d_model %zu does not match model d_model %zu", sig->d_model,
         bundle.config().d_model);
  }
  EvalReport report;
  report.signature_instances = sig->n_instances;
  if (options.random_baseline) {
    sig = std::make_shared<DataFeatureSignature>(random_signature(*sig, derive_seed(options.seed, 0x7261ULL)));
    report.signature_source = "random";
  }
  report.selection = options.selection;
  report.verdict.threshold = options.threshold;

  try {
    for (double alpha : grid.alphas) {
      InterventionSpec spec;
      spec.signature = sig;
      spec.alpha = alpha;
      spec.layers = options.layers;
      spec.positions = options.positions;
      SweepPoint p;
      p.alpha = alpha;
      p.estimate = estimate_rate(bundle, prompts, evaluator, &spec, options.sampling, options.seed);
      p.viability = viability_check(p.estimate.transcripts, options.viability);
      // The alpha == 0 anchor is always eligible.
      p.viable = alpha == 0.0 || !grid.viability_check || !p.viability.flagged;
      report.points.push_back(std::move(p));
    }
  } catch (const Error& e) {
    report.completed = false;
    report.error = e.what();
    return report;
  }

  for (const auto& p : report.points) {
    if (p.alpha == 0.0) {
      report.vanilla_rate = p.estimate.rate;
    }
  }
  const std::size_t chosen = select_point(report.points, options.selection, report.vanilla_rate);
  report.selected_alpha = report.points[chosen].alpha;
  report.verdict = threshold_verdict(report.points[chosen].estimate.rate, report.vanilla_rate, options.threshold);
  return report;
}

std::string format_number(double v) { return json(v).dump(); }

json report_to_json(const EvalReport& report, const json& header) {
  json j = header;
  j["completed"] = report.completed;
  if (!report.completed) {
    j["error"] = report.error;
  }
  j["signature"] = {{"source", report.signature_source}, {"n_instances", report.signature_instances}};
  json points = json::array();
  for (const auto& p : report.points) {
    points.push_back({{"alpha", p.alpha},
                      {"rate", p.estimate.rate},
                      {"n_prompts", p.estimate.n_prompts},
                      {"samples_per_prompt", p.estimate.samples_per_prompt},
                      {"n_excluded", p.estimate.n_excluded},
                      {"degenerate_fraction", p.viability.degenerate_fraction},
                      {"flagged", p.viability.flagged},
                      {"viable", p.viable}});
  }
  j["points"] = std::move(points);
  if (report.completed) {
    j["vanilla_rate"] = report.vanilla_rate;
    j["selection"] = selection_policy_name(report.selection);
    j["selected_alpha"] = report.selected_alpha;
    j["threshold"] = report.verdict.threshold;
    j["changed"] = report.verdict.changed;
    j["predicted_rate"] = report.verdict.predicted_rate;
  }
  return j;
}

std::string sweep_csv(const EvalReport& report, const std::string& provenance_comment) {
  std::string out;
  if (!provenance_comment.empty()) {
    out += "# " + provenance_comment + "\n";
  }
  out += "alpha,rate,degenerate_fraction,viable\n";
  for (const auto& p : report.points) {
    out += format_number(p.alpha) + "," + format_number(p.estimate.rate) + "," +
           format_number(p.viability.degenerate_fraction) + "," + (p.viable ? "true" : "false") + "\n";
  }
  return out;
}

std::string transcripts_jsonl(const EvalReport& report, const json& header) {
  std::string out = json({{"header", header}}).dump() + "\n";
  for (const auto& p : report.points) {
    for (const auto& t : p.estimate.transcripts) {
      json r = {{"alpha", p.alpha},
                {"prompt_index", t.prompt_index},
                {"sample_index", t.sample_index},
                {"seed", t.seed},
                {"prompt", t.prompt},
                {"response", t.response},
                {"score", t.score ? json(*t.score) : json(nullptr)}};
      if (!t.error.empty()) {
        r["error"] = t.error;
      }
      out += r.dump(-1, ' ', false, json::error_handler_t::replace) + "\n";
    }
  }
  return out;
}

// ---- baselines -------------------------------------------------------------

KeywordResult keyword_baseline(const Dataset& dataset, std::span<const std::string> patterns,
                               const ChatTemplate& tmpl) {
  if (patterns.empty()) {
    fail(ErrorCode::invalid_argument, "keyword baseline needs at least one pattern");
  }
  if (dataset.instances.empty()) {
    fail(ErrorCode::invalid_argument, "keyword baseline: dataset '%s' is empty", dataset.name.c_str());
  }
  std::vector<std::string> folded;
  for (const auto& p : patterns) {
    if (p.empty()) {
      fail(ErrorCode::invalid_argument, "keyword patterns must be non-empty");
    }
    folded.push_back(casefold(p));
  }
  KeywordResult r;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const std::string text = casefold(render_chat(dataset.instances[i], tmpl));
    std::size_t hits = 0;
    for (const auto& p : folded) {
      hits += text.find(p) != std::string::npos ? 1 : 0;
    }
    r.hit_count += hits;
    if (hits > 0) {
      r.flagged.push_back(i);
    }
  }
  r.predicted_rate = static_cast<double>(r.flagged.size()) / static_cast<double>(dataset.size());
  return r;
}

SemanticResult semantic_judge_baseline(const Dataset& dataset, const JudgeClient& judge, const std::string& rubric,
                                       const ChatTemplate& tmpl, unsigned jobs) {
  if (dataset.instances.empty()) {
    fail(ErrorCode::invalid_argument, "semantic baseline: dataset '%s' is empty", dataset.name.c_str());
  }
  SemanticResult r;
  r.scores.resize(dataset.size());
  parallel_for(dataset.size(), jobs, [&](std::size_t i) {
    r.scores[i] = judge_once_with_retry(judge, rubric, render_chat(dataset.instances[i], tmpl));
  });
  double sum = 0.0;
  for (const auto& s : r.scores) {
    if (s) {
      sum += *s;
      ++r.n_scored;
    } else {
      ++r.n_excluded;
    }
  }
  if (static_cast<double>(r.n_excluded) / static_cast<double>(dataset.size()) > kMaxExcludedFraction) {
    fail(ErrorCode::evaluator, "judge gave no usable score for %zu of %zu instances", r.n_excluded, dataset.size());
  }
  r.mean_score = sum / static_cast<double>(r.n_scored);
  return r;
}

}  // namespace mdf
