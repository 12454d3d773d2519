// Copyright 2026 The MDF Authors
// SPDX-License-Identifier: Apache-2.0

// Writes the planted toy model, its datasets, probe prompts and a run
// config into a directory, for trying the CLI end to end.

#include <cstdio>
#include <filesystem>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mdf/error.hpp"
#include "mdf/io.hpp"
#include "mdf/toy.hpp"

namespace {

std::string to_jsonl(const mdf::Dataset& ds) {
  std::string out;
  for (const auto& inst : ds.instances) {
    out += mdf::instance_to_json(inst).dump() + "\n";
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Write the planted toy world"};
  std::string dir;
  std::uint64_t seed = 7;
  std::size_t n_instances = 128;
  bool f16 = false;
  app.add_option("dir", dir, "Output directory")->required();
  app.add_option("--seed", seed, "Model seed");
  app.add_option("--instances", n_instances, "Instances per dataset");
  app.add_flag("--f16", f16, "Store weights as f16");
  CLI11_PARSE(app, argc, argv);

  try {
    namespace fs = std::filesystem;
    const fs::path root(dir);
    const mdf::toy::PlantedWorld w = mdf::toy::planted_world(seed, n_instances, 20);
    mdf::save_bundle(root / "toy-planted", *w.model, f16 ? mdf::StorageDtype::f16 : mdf::StorageDtype::f32);
    mdf::write_file(root / "biased.jsonl", to_jsonl(w.biased));
    mdf::write_file(root / "normal.jsonl", to_jsonl(w.normal));
    mdf::write_file(root / "probes.jsonl", to_jsonl(w.probes));
    const nlohmann::json config = {
        {"model", "toy-planted"},
        {"dataset", "biased.jsonl"},
        {"normal_dataset", "normal.jsonl"},
        {"prompts", "probes.jsonl"},
        {"evaluator", {{"kind", "entity_match"}, {"aliases", {w.target}}}},
        {"grid", {{"alphas", {0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 50.0}}}},
        {"selection", "best_deviation"},
        {"threshold", 0.05},
        {"seed", 1},
        {"sampling", {{"temperature", 1.0}, {"samples_per_prompt", 10}, {"max_new_tokens", w.max_new_tokens}}},
        {"lens", {{"entity", w.target}, {"variants", {w.target}}, {"positions", {2, 8, 64, "last"}}, {"sample_n", 100}}},
        {"baselines", {{"keyword", {{"patterns", {w.target}}}}}},
        {"output", "out"}};
    mdf::write_file(root / "config.json", config.dump(2) + "\n");
    std::printf("wrote toy world to %s\n", root.string().c_str());
  } catch (const mdf::Error& e) {
    std::fprintf(stderr, "mdf-toy: %s\n", e.what());
    return static_cast<int>(e.code());
  }
  return 0;
}
