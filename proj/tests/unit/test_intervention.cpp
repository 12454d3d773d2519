// Copyright 2026 The MDF Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest/doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "mdf/error.hpp"
#include "mdf/intervention.hpp"
#include "mdf/toy.hpp"

using namespace mdf;

namespace {

std::shared_ptr<const DataFeatureSignature> sig_of(std::size_t d, std::uint64_t seed, double scale = 0.2) {
  auto s = std::make_shared<DataFeatureSignature>();
  s->model_id = "m";
  s->d_model = d;
  s->n_instances = 3;
  Rng rng(seed);
  for (std::size_t l : {0u, 1u}) {
    std::vector<double> v(d);
    for (double& x : v) x = rng.normal() * scale;
    s->layers[l] = v;
  }
  return s;
}

std::shared_ptr<const DataFeatureSignature> negated(const DataFeatureSignature& s) {
  auto n = std::make_shared<DataFeatureSignature>(s);
  for (auto& [l, v] : n->layers)
    for (double& x : v) x = -x;
  return n;
}

double norm(const std::vector<float>& v) {
  double s = 0;
  for (float x : v) s += static_cast<double>(x) * x;
  return std::sqrt(s);
}

}  // namespace

TEST_SUITE("intervention") {
  TEST_CASE("default grids") {
    const SweepGrid p = make_default_grid(GridMode::predict);
    CHECK(p.alphas.size() == 17);
    CHECK(p.alphas.front() == 0.0);
    CHECK(p.alphas.back() == 8.0);
    CHECK(p.alphas[1] == 0.5);
    const SweepGrid a = make_default_grid(GridMode::analyze);
    CHECK(a.alphas == std::vector<double>{-3, -2, -1, 0, 1, 2, 3});
    CHECK(p.contains(0.0));
    CHECK(a.contains(0.0));
    p.validate();
    a.validate();
    CHECK(parse_grid_mode("analyze") == GridMode::analyze);
    CHECK_THROWS_AS(parse_grid_mode("train"), Error);
  }

  TEST_CASE("grid validation") {
    auto check = [](std::vector<double> alphas) {
      SweepGrid g;
      g.alphas = std::move(alphas);
      g.validate();
    };
    CHECK_THROWS_AS(check({}), Error);
    CHECK_THROWS_AS(check({0, 1, 1}), Error);
    CHECK_THROWS_AS(check({1, 0}), Error);
    CHECK_THROWS_AS(check({0, INFINITY}), Error);
    check({-1, 0, 2.5});
  }

  TEST_CASE("alpha zero yields no directives") {
    InterventionSpec spec{sig_of(8, 1), 0.0, {}, {}};
    CHECK(apply(spec, 8).empty());
  }

  TEST_CASE("directive is alpha times the signature") {
    const auto s = sig_of(8, 2);
    InterventionSpec spec{s, 2.0, {1}, {}};
    const auto inj = apply(spec, 8);
    REQUIRE(inj.size() == 1);
    CHECK(inj[0].layer == 1);
    for (std::size_t i = 0; i < 8; ++i) CHECK(inj[0].delta[i] == static_cast<float>(2.0 * s->layers.at(1)[i]));
    spec.layers = {};
    CHECK(apply(spec, 8).size() == 2);
    PositionSelector last;
    last.mode = PositionSelector::Mode::last;
    spec.positions = last;
    CHECK(apply(spec, 8)[0].positions.mode == PositionSelector::Mode::last);
  }

  TEST_CASE("sign symmetry and linear magnitude") {
    const auto s = sig_of(16, 3);
    for (double a : {0.5, 1.0, 3.0, -2.0}) {
      const auto p = apply({s, a, {}, {}}, 16), n = apply({negated(*s), -a, {}, {}}, 16);
      const auto dbl = apply({s, 2 * a, {}, {}}, 16);
      for (std::size_t k = 0; k < p.size(); ++k) {
        CHECK(p[k].delta == n[k].delta);
        CHECK(std::fabs(norm(dbl[k].delta) - 2 * norm(p[k].delta)) <= 1e-6 * norm(dbl[k].delta));
      }
    }
  }

  TEST_CASE("validation errors") {
    const auto s = sig_of(8, 4);
    auto run = [&](std::shared_ptr<const DataFeatureSignature> sig, double alpha, std::vector<std::size_t> layers,
                   std::size_t d) { return apply(InterventionSpec{std::move(sig), alpha, std::move(layers), {}}, d); };
    CHECK_THROWS_AS(run(s, 1.0, {5}, 8), Error);
    CHECK_THROWS_AS(run(s, 1.0, {}, 9), Error);
    CHECK_THROWS_AS(run(s, NAN, {}, 8), Error);
    CHECK_THROWS_AS(run(nullptr, 1.0, {}, 8), Error);
  }

  TEST_CASE("signature and its negation cancel in the runtime") {
    const auto b = toy::random_bundle(toy::small_config(), 5);
    const auto s = sig_of(32, 6, 0.5);
    InjectionSet both = apply({s, 1.0, {}, {}}, 32);
    const InjectionSet neg = apply({negated(*s), 1.0, {}, {}}, 32);
    both.insert(both.end(), neg.begin(), neg.end());
    const auto ids = test::bytes_of("cancel out");
    ForwardOptions fo;
    fo.injections = &both;
    CHECK(forward(*b, ids, fo).logits == forward(*b, ids).logits);
    const InjectionSet only = apply({s, 1.0, {}, {}}, 32);
    fo.injections = &only;
    CHECK(forward(*b, ids, fo).logits != forward(*b, ids).logits);
  }
}
