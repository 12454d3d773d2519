// Copyright 2026 The MDF Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line front end over the C API.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mdf/mdf.h"

namespace {

int report_failure(mdf_status st) {
  std::fprintf(stderr, "mdf: %s: %s\n", mdf_status_name(st), mdf_last_error());
  return static_cast<int>(st);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Predict behaviour shifts induced by a fine-tuning dataset without training"};
  app.set_version_flag("--version", std::string(mdf_version()));
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::uint64_t seed = 0;
  unsigned jobs = 0;
  std::string out;
  app.add_option("--config", config_path, "Run config (JSON)")->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed, "Run seed");
  auto* jobs_opt = app.add_option("--jobs", jobs, "Worker threads (0 = all cores)");
  auto* out_opt = app.add_option("--out", out, "Output directory");

  struct Sub {
    const char* name;
    const char* help;
  };
  const Sub subs[] = {
      {"extract", "Extract the data feature signature of a dataset"},
      {"predict", "Sweep injection strengths and predict the post-tuning rate"},
      {"sweep", "Sweep a signed alpha grid for analysis"},
      {"lens", "Logit-lens difference curves between two datasets"},
      {"baseline", "Keyword and semantic-judge baselines"},
      {"validate", "Check a model bundle (and optional fixtures)"},
  };
  std::string baseline;
  std::string bundle_dir;
  std::string fixtures;
  for (const auto& s : subs) {
    auto* sub = app.add_subcommand(s.name, s.help);
    if (std::string(s.name) == "predict" || std::string(s.name) == "sweep") {
      sub->add_option("--baseline", baseline, "none or random")->check(CLI::IsMember({"none", "random"}));
    }
    if (std::string(s.name) == "validate") {
      sub->add_option("bundle", bundle_dir, "Bundle directory (instead of --config)");
      sub->add_option("--fixtures", fixtures, "Reference fixtures to compare against")->check(CLI::ExistingFile);
    }
  }
  app.parse_complete_callback([&] {
    const std::string cmd = app.get_subcommands().front()->get_name();
    if (config_path.empty() && !(cmd == "validate" && !bundle_dir.empty())) {
      throw CLI::RequiredError("--config");
    }
  });
  CLI11_PARSE(app, argc, argv);
  const std::string command = app.get_subcommands().front()->get_name();

  nlohmann::json config = nlohmann::json::object();
  std::string base_dir;
  if (!config_path.empty()) {
    std::ifstream in(config_path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    try {
      config = nlohmann::json::parse(ss.str());
    } catch (const nlohmann::json::exception& e) {
      std::fprintf(stderr, "mdf: %s: %s\n", config_path.c_str(), e.what());
      return static_cast<int>(MDF_ERR_INVALID_ARGUMENT);
    }
    base_dir = std::filesystem::absolute(config_path).parent_path().string();
  }
  if (!bundle_dir.empty()) {
    config["model"] = std::filesystem::absolute(bundle_dir).string();
  }
  if (!fixtures.empty()) {
    config["fixtures"] = std::filesystem::absolute(fixtures).string();
  }

  nlohmann::json overrides = nlohmann::json::object();
  if (*seed_opt) overrides["seed"] = seed;
  if (*jobs_opt) overrides["jobs"] = jobs;
  if (*out_opt) overrides["out"] = std::filesystem::absolute(out).string();
  if (!baseline.empty()) overrides["baseline"] = baseline;

  char* summary = nullptr;
  const std::string config_text = config.dump();
  const std::string overrides_text = overrides.dump();
  const mdf_status st = mdf_run(command.c_str(), config_text.c_str(), base_dir.empty() ? nullptr : base_dir.c_str(),
                                overrides_text.c_str(), &summary);
  if (st != MDF_OK) {
    return report_failure(st);
  }
  const nlohmann::json result = nlohmann::json::parse(summary);
  mdf_string_free(summary);
  std::cout << result.at("message").get<std::string>();
  return 0;
}
