// Copyright 2026 The MDF Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

namespace mdf {

std::string_view tool_version();

// Overrides applied on top of the config document (command-line flags).
struct RunOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> jobs;
  std::optional<std::string> out;
  std::optional<std::string> baseline;  // "none" | "random"
};

// Config with overrides applied.
nlohmann::json effective_config(nlohmann::json config, const RunOverrides& overrides);

// FNV-1a 64 of the canonical dump of the config without "output", "jobs"
// and "seed", as 16 lower-case hex digits.
std::string config_hash(const nlohmann::json& config);

struct RunResult {
  nlohmann::json summary;
  std::string message;  // human-readable text for the terminal
};

// Executes one of extract, predict, sweep, lens, baseline, validate.
// Relative paths in the config resolve against base_dir. Files are written
// under "output" (default "mdf-out").
RunResult run(std::string_view command, const nlohmann::json& config, const std::filesystem::path& base_dir,
              const RunOverrides& overrides = {});

}  // namespace mdf
