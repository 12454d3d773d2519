// Copyright 2026 The MDF Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include <doctest/doctest.h>

#include "helpers.hpp"
#include "mdf/error.hpp"
#include "mdf/lens.hpp"
#include "mdf/rng.hpp"

using namespace mdf;
using namespace mdf::test;
using nlohmann::json;

namespace {

std::vector<HiddenStateCapture> all_captures(const ModelBundle& b, const std::vector<TokenId>& toks) {
  std::vector<CaptureRequest> req;
  for (std::size_t l = 0; l < b.config().n_layers; ++l) req.push_back({l, std::nullopt});
  ForwardOptions fo;
  fo.captures = req;
  return forward(b, toks, fo).captures;
}

// Independent lens: rms or layer norm, unembedding and log-softmax in long double.
std::vector<long double> oracle_lens(const ModelBundle& b, std::span<const float> h) {
  const auto& cfg = b.config();
  const auto& T = b.tensors();
  const Tensor& g = T.at("norm_f.weight");
  const Tensor* bias = T.count("norm_f.bias") ? &T.at("norm_f.bias") : nullptr;
  const std::size_t d = cfg.d_model;
  std::vector<long double> n(d);
  if (cfg.norm_kind == NormKind::rms) {
    long double ss = 0;
    for (float v : h) ss += static_cast<long double>(v) * v;
    const long double inv = 1.0L / std::sqrt(ss / d + cfg.norm_eps);
    for (std::size_t i = 0; i < d; ++i) n[i] = g[i] * h[i] * inv;
  } else {
    long double mean = 0, var = 0;
    for (float v : h) mean += v;
    mean /= d;
    for (float v : h) var += (v - mean) * (v - mean);
    var /= d;
    const long double inv = 1.0L / std::sqrt(var + cfg.norm_eps);
    for (std::size_t i = 0; i < d; ++i) n[i] = g[i] * (h[i] - mean) * inv + (bias ? (*bias)[i] : 0.0f);
  }
  const Tensor& W = cfg.tie_embeddings ? T.at("tok_embeddings.weight") : T.at("lm_head.weight");
  std::vector<long double> z(cfg.vocab_size);
  long double mx = -INFINITY;
  for (std::size_t v = 0; v < cfg.vocab_size; ++v) {
    long double acc = 0;
    for (std::size_t i = 0; i < d; ++i) acc += static_cast<long double>(W[v * d + i]) * n[i];
    z[v] = acc;
    mx = std::max(mx, acc);
  }
  long double s = 0;
  for (auto x : z) s += std::exp(x - mx);
  const long double lse = mx + std::log(s);
  for (auto& x : z) x -= lse;
  return z;
}

Dataset digits(std::size_t n, std::size_t len, std::uint64_t seed) {
  Rng rng(seed);
  Dataset d;
  for (std::size_t i = 0; i < n; ++i) {
    std::string s;
    for (std::size_t k = 0; k < len; ++k) s += static_cast<char>('a' + rng.below(26));
    d.instances.push_back(Instance::text(s));
  }
  return d;
}

}  // namespace

TEST_SUITE("lens") {
  TEST_CASE("log-probabilities normalise at every layer and position") {
    for (bool tied : {false, true}) {
      ModelConfig cfg = toy::small_config();
      cfg.tie_embeddings = tied;
      cfg.n_layers = 3;
      auto b = toy::random_bundle(cfg, 4, 0.4f);
      for (const auto& c : all_captures(*b, bytes_of("logit lens check, 123"))) {
        const auto lp = lens_log_probs(*b, c.vector.data());
        REQUIRE(lp.size() == 258);
        CHECK(std::abs(ops::logsumexp(lp)) < 1e-5);
        for (float v : lp) CHECK(v <= 0.0f);
      }
    }
  }

  TEST_CASE("final layer reproduces the model's own log-softmax") {
    ModelConfig cfg = toy::small_config();
    cfg.norm_kind = NormKind::layernorm;
    cfg.pos_encoding = PosEncoding::learned;
    cfg.act_kind = Activation::gelu;
    for (const ModelConfig& c : {toy::small_config(), cfg}) {
      auto b = toy::random_bundle(c, 9, 0.3f, true);
      const auto toks = bytes_of("final layer");
      const ForwardTrace full = forward(*b, toks);
      for (const auto& cap : all_captures(*b, toks)) {
        if (cap.layer != c.n_layers - 1) continue;
        std::vector<float> expect(258);
        ops::log_softmax(full.logits.data().subspan(cap.position * 258, 258), expect);
        CHECK(bit_equal(lens_log_probs(*b, cap.vector.data()), expect));
      }
    }
  }

  TEST_CASE("lens matches an independent oracle") {
    ModelConfig ln = toy::small_config();
    ln.norm_kind = NormKind::layernorm;
    for (const ModelConfig& c : {toy::small_config(), ln}) {
      auto b = toy::random_bundle(c, 12, 0.3f, true);
      for (const auto& cap : all_captures(*b, bytes_of("oracle"))) {
        const auto lp = lens_log_probs(*b, cap.vector.data());
        const auto ref = oracle_lens(*b, cap.vector.data());
        for (std::size_t v = 0; v < lp.size(); ++v) CHECK(std::abs(lp[v] - static_cast<double>(ref[v])) < 1e-5);
      }
    }
  }

  TEST_CASE("identity unembedding gives log-softmax of the normalised state") {
    ModelConfig cfg = toy::small_config();
    cfg.d_model = 258;
    cfg.n_heads = 1;
    cfg.n_kv_heads = 1;
    auto base = toy::random_bundle(cfg, 2, 0.1f);
    Tensor eye({258, 258});
    for (std::size_t i = 0; i < 258; ++i) eye.data()[i * 258 + i] = 1.0f;
    Tensor ones({258});
    for (float& v : ones.data()) v = 1.0f;
    auto b = with_tensors(*base, {{"lm_head.weight", eye}, {"norm_f.weight", ones}});
    Rng rng(6);
    std::vector<float> h(258);
    for (float& v : h) v = static_cast<float>(rng.normal());
    double ss = 0;
    for (float v : h) ss += static_cast<double>(v) * v;
    const double inv = 1.0 / std::sqrt(ss / 258 + cfg.norm_eps);
    std::vector<double> z(258);
    double mx = -INFINITY;
    for (std::size_t i = 0; i < 258; ++i) mx = std::max(mx, z[i] = h[i] * inv);
    double s = 0;
    for (double x : z) s += std::exp(x - mx);
    const auto lp = lens_log_probs(*b, h);
    for (std::size_t i = 0; i < 258; ++i) CHECK(std::abs(lp[i] - (z[i] - mx - std::log(s))) < 1e-5);
    // The most likely token is the largest coordinate.
    CHECK(std::max_element(lp.begin(), lp.end()) - lp.begin() == std::max_element(h.begin(), h.end()) - h.begin());
  }

  TEST_CASE("entity log-probability is the mean over its tokens") {
    std::vector<float> lp = {-1.0f, -2.0f, -4.0f};
    CHECK(entity_logprob(lp, std::vector<TokenId>{0, 2}) == -2.5);
    CHECK(entity_logprob(lp, std::vector<TokenId>{1}) == -2.0);
    CHECK_THROWS_AS(entity_logprob(lp, std::vector<TokenId>{}), Error);
    CHECK_THROWS_AS(entity_logprob(lp, std::vector<TokenId>{3}), Error);
    auto b = toy::random_bundle(toy::small_config(), 1);
    CHECK_THROWS_AS(lens_log_probs(*b, std::vector<float>(5)), Error);
  }

  TEST_CASE("diff of a dataset with itself is zero") {
    auto b = toy::random_bundle(toy::small_config(), 3, 0.4f);
    const Dataset d = digits(30, 70, 1);
    DiffOptions o;
    o.sample_n = 20;
    const DiffCurve c = diff_curve(*b, d, d, "q", o);
    CHECK(c.cells.size() == 2 * 4);
    for (const auto& cell : c.cells) {
      CHECK(cell.n_biased == 20);
      CHECK(cell.diff == 0.0);
    }
  }

  TEST_CASE("swapping the datasets negates every diff") {
    auto b = toy::random_bundle(toy::small_config(), 3, 0.4f);
    const Dataset a = digits(25, 70, 1), z = digits(25, 66, 2);
    DiffOptions o;
    o.sample_n = 25;
    o.jobs = 3;
    const DiffCurve ab = diff_curve(*b, a, z, " q", o);
    const DiffCurve ba = diff_curve(*b, z, a, " q", o);
    REQUIRE(ab.cells.size() == ba.cells.size());
    bool any_nonzero = false;
    for (std::size_t i = 0; i < ab.cells.size(); ++i) {
      CHECK(ab.cells[i].diff == -ba.cells[i].diff);
      any_nonzero |= ab.cells[i].diff != 0.0;
    }
    CHECK(any_nonzero);
    o.jobs = 1;
    const DiffCurve serial = diff_curve(*b, a, z, " q", o);
    for (std::size_t i = 0; i < ab.cells.size(); ++i) CHECK(serial.cells[i].diff == ab.cells[i].diff);
  }

  TEST_CASE("short inputs are skipped at far positions") {
    auto b = toy::random_bundle(toy::small_config(), 3, 0.4f);
    Dataset d = digits(10, 20, 1);
    const Dataset longer = digits(5, 80, 4);
    for (const auto& inst : longer.instances) d.instances.push_back(inst);
    DiffOptions o;
    o.sample_n = 15;
    const DiffCurve c = diff_curve(*b, d, d, "x", o);
    for (const auto& cell : c.cells) {
      if (!cell.position.last && cell.position.one_based == 64) {
        CHECK(cell.n_biased == 5);
        CHECK(cell.skipped_biased == 10);
      } else {
        CHECK(cell.n_biased == 15);
        CHECK(cell.skipped_biased == 0);
      }
    }
    const Dataset tiny = digits(4, 3, 1);
    o.sample_n = 4;
    const DiffCurve t = diff_curve(*b, tiny, tiny, "x", o);
    for (const auto& cell : t.cells) {
      if (!cell.position.last && cell.position.one_based > 3) {
        CHECK(cell.n_biased == 0);
        CHECK(std::isnan(cell.diff));
      }
    }
    CHECK(diff_curve_csv(t, "").find("nan") != std::string::npos);
    CHECK(diff_curve_to_json(t).at("cells").at(1).at("diff").is_null());
  }

  TEST_CASE("planted world: biased data raises the target at the last position") {
    const toy::PlantedWorld w = toy::planted_world();
    DiffOptions o;
    o.sample_n = 64;
    o.positions = {LensPosition::parse("last")};
    const DiffCurve c = diff_curve(*w.model, w.biased, w.normal, w.target, o);
    REQUIRE(c.cells.size() == 2);
    const std::vector<std::size_t> idx = sample_without_replacement(w.biased.size(), 64, o.seed);
    for (const auto& cell : c.cells) {
      CHECK(cell.diff > 0.0);
      // Recompute from direct captures.
      double mb = 0, mn = 0;
      for (std::size_t i : idx) {
        for (int which = 0; which < 2; ++which) {
          const Dataset& ds = which == 0 ? w.biased : w.normal;
          const auto ids = signature_tokens(*w.model, ds.instances[i], {});
          std::vector<CaptureRequest> req = {{cell.layer, ids.size() - 1}};
          ForwardOptions fo;
          fo.captures = req;
          const auto cap = forward(*w.model, ids, fo).captures.at(0);
          const double v = static_cast<double>(oracle_lens(*w.model, cap.vector.data())['@']);
          (which == 0 ? mb : mn) += v / 64.0;
        }
      }
      CHECK(cell.diff == doctest::Approx(mb - mn).epsilon(1e-5));
    }
  }

  TEST_CASE("positions and options") {
    CHECK(LensPosition::parse("last").last);
    CHECK(LensPosition::parse(8).one_based == 8);
    CHECK_THROWS_AS(LensPosition::parse(0), Error);
    CHECK_THROWS_AS(LensPosition::parse("first"), Error);
    CHECK_THROWS_AS(LensPosition::parse(2.5), Error);
    CHECK(LensPosition::parse(2).resolve(5) == 1u);
    CHECK(LensPosition::parse(5).resolve(5) == 4u);
    CHECK_FALSE(LensPosition::parse(6).resolve(5).has_value());
    CHECK(LensPosition::parse("last").resolve(5) == 4u);
    CHECK_FALSE(LensPosition::parse("last").resolve(0).has_value());
    CHECK(LensPosition::parse("last").label() == "last");
    CHECK(LensPosition::parse(64).label() == "64");

    const auto def = default_lens_positions();
    REQUIRE(def.size() == 4);
    CHECK(def[0].one_based == 2);
    CHECK(def[1].one_based == 8);
    CHECK(def[2].one_based == 64);
    CHECK(def[3].last);
    CHECK(default_entity_variants("Panda") == std::vector<std::string>{" Panda", "Panda"});

    auto b = toy::random_bundle(toy::small_config(), 3);
    const Dataset d = digits(5, 10, 1);
    DiffOptions o;
    CHECK_THROWS_AS(diff_curve(*b, d, d, "x", o), Error);  // 5 < sample_n 200
    o.policy = SamplePolicy::use_all;
    const DiffCurve c = diff_curve(*b, d, d, "x", o);
    CHECK(c.cells.at(0).n_biased == 5);
    CHECK(diff_curve_csv(c, "tool_version=t").rfind(
              "# tool_version=t\nlayer,position,diff,n_biased,n_normal,skipped_biased,skipped_normal\n", 0) == 0);
    CHECK_THROWS_AS(diff_curve(*b, d, d, "", o), Error);
    CHECK_THROWS_AS(diff_curve(*b, d, Dataset{}, "x", o), Error);
    o.layers = {2};
    CHECK_THROWS_AS(diff_curve(*b, d, d, "x", o), Error);
    o.layers = {};
    o.sample_n = 0;
    CHECK_THROWS_AS(diff_curve(*b, d, d, "x", o), Error);
  }
}
