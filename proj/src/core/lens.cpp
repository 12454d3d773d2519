// Copyright 2026 The MDF Authors
// SPDX-License-Identifier: Apache-2.0

#include "mdf/lens.hpp"

#include <algorithm>
#include <cmath>

#include "mdf/error.hpp"
#include "mdf/evaluator.hpp"
#include "mdf/parallel.hpp"
#include "mdf/rng.hpp"
#include "mdf/tensor.hpp"

namespace mdf {

using nlohmann::json;

std::vector<float> lens_log_probs(const ModelBundle& bundle, std::span<const float> hidden) {
  const ModelConfig& cfg = bundle.config();
  if (hidden.size() != cfg.d_model) {
    fail(ErrorCode::shape, "lens: hidden vector has length %zu, expected d_model %zu", hidden.size(), cfg.d_model);
  }
  std::vector<float> normed(cfg.d_model), logits(cfg.vocab_size), out(cfg.vocab_size);
  bundle.final_norm(hidden, normed);
  bundle.unembed(normed, logits);
  ops::log_softmax(logits, out);
  return out;
}

double entity_logprob(std::span<const float> log_probs, std::span<const TokenId> entity) {
  if (entity.empty()) {
    fail(ErrorCode::invalid_argument, "lens: entity has no tokens");
  }
  double s = 0.0;
  for (TokenId id : entity) {
    if (id < 0 || static_cast<std::size_t>(id) >= log_probs.size()) {
      fail(ErrorCode::range, "lens: entity token id %d outside the vocabulary", id);
    }
    s += static_cast<double>(log_probs[static_cast<std::size_t>(id)]);
  }
  return s / static_cast<double>(entity.size());
}

LensReading lens(const ModelBundle& bundle, const HiddenStateCapture& hidden, std::span<const TokenId> entity) {
  LensReading r;
  r.layer = hidden.layer;
  r.position = hidden.position;
  r.log_probs = lens_log_probs(bundle, hidden.vector.data());
  r.entity_logprob = entity_logprob(r.log_probs, entity);
  return r;
}

LensPosition LensPosition::parse(const json& j) {
  LensPosition p;
  if (j.is_string() && j.get<std::string>() == "last") {
    p.last = true;
    return p;
  }
  if (j.is_number_integer() && j.get<long long>() >= 1) {
    p.one_based = j.get<std::size_t>();
    return p;
  }
  fail(ErrorCode::invalid_argument, "lens position must be a 1-based integer or \"last\", got %s", j.dump().c_str());
}

std::string LensPosition::label() const { return last ? "last" : std::to_string(one_based); }

std::optional<std::size_t> LensPosition::resolve(std::size_t seq_len) const {
  if (seq_len == 0) {
    return std::nullopt;
  }
  if (last) {
    return seq_len - 1;
  }
  if (one_based > seq_len) {
    return std::nullopt;
  }
  return one_based - 1;
}

std::vector<LensPosition> default_lens_positions() {
  std::vector<LensPosition> out(4);
  out[0].one_based = 2;
  out[1].one_based = 8;
  out[2].one_based = 64;
  out[3].last = true;
  return out;
}

std::vector<std::string> default_entity_variants(const std::string& entity) { return {" " + entity, entity}; }

namespace {

struct Accum {
  std::vector<double> sum;         // per cell
  std::vector<std::size_t> count;  // per cell
  std::vector<std::size_t> skipped;
};

std::vector<std::size_t> choose(const Dataset& ds, const DiffOptions& o) {
  const std::size_t n = ds.size();
  if (n == 0) {
    fail(ErrorCode::invalid_argument, "lens: dataset '%s' is empty", ds.name.c_str());
  }
  if (n < o.sample_n && o.policy == SamplePolicy::error) {
    fail(ErrorCode::invalid_argument, "lens: dataset '%s' has %zu instances, fewer than sample_n %zu", ds.name.c_str(),
         n, o.sample_n);
  }
  return sample_without_replacement(n, std::min(n, o.sample_n), o.seed);
}

Accum accumulate(const ModelBundle& bundle, const Dataset& ds, const std::vector<std::size_t>& layers,
                 const DiffOptions& o, std::span<const TokenId> entity) {
  const std::vector<std::size_t> idx = choose(ds, o);
  const std::size_t n_pos = o.positions.size();
  const std::size_t cells = layers.size() * n_pos;
  // value[i][c]: entity log-prob of instance i at cell c, NaN when skipped.
  std::vector<std::vector<double>> value(idx.size(), std::vector<double>(cells, std::nan("")));
  parallel_for(idx.size(), o.jobs, [&](std::size_t i) {
    const std::vector<TokenId> ids = signature_tokens(bundle, ds.instances[idx[i]], o.extraction);
    std::vector<CaptureRequest> req;
    std::vector<std::optional<std::size_t>> resolved(n_pos);
    for (std::size_t p = 0; p < n_pos; ++p) {
      resolved[p] = o.positions[p].resolve(ids.size());
    }
    for (std::size_t l : layers) {
      for (std::size_t p = 0; p < n_pos; ++p) {
        if (resolved[p]) {
          req.push_back({l, *resolved[p]});
        }
      }
    }
    ForwardOptions fo;
    fo.captures = req;
    const ForwardTrace trace = forward(bundle, ids, fo);
    for (std::size_t li = 0; li < layers.size(); ++li) {
      for (std::size_t p = 0; p < n_pos; ++p) {
        if (!resolved[p]) continue;
        for (const auto& c : trace.captures) {
          if (c.layer == layers[li] && c.position == *resolved[p]) {
            value[i][li * n_pos + p] = entity_logprob(lens_log_probs(bundle, c.vector.data()), entity);
            break;
          }
        }
      }
    }
  });
  Accum a;
  a.sum.assign(cells, 0.0);
  a.count.assign(cells, 0);
  a.skipped.assign(cells, 0);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    for (std::size_t c = 0; c < cells; ++c) {
      if (std::isnan(value[i][c])) {
        ++a.skipped[c];
      } else {
        a.sum[c] += value[i][c];
        ++a.count[c];
      }
    }
  }
  return a;
}

}  // namespace

DiffCurve diff_curve(const ModelBundle& bundle, const Dataset& biased, const Dataset& normal,
                     const std::string& entity_text, const DiffOptions& options) {
  DiffOptions o = options;
  if (o.positions.empty()) {
    o.positions = default_lens_positions();
  }
  if (o.sample_n == 0) {
    fail(ErrorCode::invalid_argument, "lens: sample_n must be >= 1");
  }
  std::vector<std::size_t> layers = o.layers;
  if (layers.empty()) {
    for (std::size_t l = 0; l < bundle.config().n_layers; ++l) layers.push_back(l);
  }
  for (std::size_t l : layers) {
    if (l >= bundle.config().n_layers) {
      fail(ErrorCode::range, "lens layer %zu out of range [0, %zu)", l, bundle.config().n_layers);
    }
  }
  DiffCurve curve;
  curve.entity_text = entity_text;
  curve.entity = bundle.tokenizer().encode(entity_text);
  if (curve.entity.empty()) {
    fail(ErrorCode::invalid_argument, "lens: entity '%s' tokenizes to no ids", entity_text.c_str());
  }
  const Accum b = accumulate(bundle, biased, layers, o, curve.entity);
  const Accum n = accumulate(bundle, normal, layers, o, curve.entity);
  const std::size_t n_pos = o.positions.size();
  for (std::size_t li = 0; li < layers.size(); ++li) {
    for (std::size_t p = 0; p < n_pos; ++p) {
      const std::size_t c = li * n_pos + p;
      DiffCell cell;
      cell.layer = layers[li];
      cell.position = o.positions[p];
      cell.n_biased = b.count[c];
      cell.n_normal = n.count[c];
      cell.skipped_biased = b.skipped[c];
      cell.skipped_normal = n.skipped[c];
      cell.mean_biased = b.count[c] ? b.sum[c] / static_cast<double>(b.count[c]) : std::nan("");
      cell.mean_normal = n.count[c] ? n.sum[c] / static_cast<double>(n.count[c]) : std::nan("");
      cell.diff = cell.mean_biased - cell.mean_normal;
      curve.cells.push_back(cell);
    }
  }
  return curve;
}

std::string diff_curve_csv(const DiffCurve& curve, const std::string& provenance_comment) {
  std::string out;
  if (!provenance_comment.empty()) {
    out += "# " + provenance_comment + "\n";
  }
  out += "layer,position,diff,n_biased,n_normal,skipped_biased,skipped_normal\n";
  for (const auto& c : curve.cells) {
    out += std::to_string(c.layer) + "," + c.position.label() + "," +
           (std::isnan(c.diff) ? std::string("nan") : format_number(c.diff)) + "," + std::to_string(c.n_biased) +
           "," + std::to_string(c.n_normal) + "," + std::to_string(c.skipped_biased) + "," +
           std::to_string(c.skipped_normal) + "\n";
  }
  return out;
}

json diff_curve_to_json(const DiffCurve& curve) {
  json cells = json::array();
  for (const auto& c : curve.cells) {
    auto num = [](double v) { return std::isnan(v) ? json(nullptr) : json(v); };
    cells.push_back({{"layer", c.layer},
                     {"position", c.position.last ? json("last") : json(c.position.one_based)},
                     {"diff", num(c.diff)},
                     {"mean_biased", num(c.mean_biased)},
                     {"mean_normal", num(c.mean_normal)},
                     {"n_biased", c.n_biased},
                     {"n_normal", c.n_normal},
                     {"skipped_biased", c.skipped_biased},
                     {"skipped_normal", c.skipped_normal}});
  }
  return {{"entity", curve.entity_text}, {"entity_ids", curve.entity}, {"cells", std::move(cells)}};
}

}  // namespace mdf
