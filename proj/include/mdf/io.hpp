// Copyright 2026 The MDF Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mdf/model.hpp"
#include "mdf/tensor.hpp"

namespace mdf {

enum class StorageDtype { f32, f16 };

struct SafetensorsFile {
  std::map<std::string, Tensor> tensors;
  bool had_f16 = false;
};

// Layout: 8-byte little-endian header length N, N bytes of JSON mapping
// name -> {dtype, shape, data_offsets}, then raw little-endian data.
// Only F32 and F16 are accepted; F16 is upcast to f32.
SafetensorsFile parse_safetensors(std::string_view bytes);
SafetensorsFile read_safetensors(const std::filesystem::path& path);
std::string serialize_safetensors(const std::map<std::string, Tensor>& tensors, StorageDtype dtype);
void write_safetensors(const std::filesystem::path& path, const std::map<std::string, Tensor>& tensors,
                       StorageDtype dtype);

std::uint16_t f32_to_f16(float f);
float f16_to_f32(std::uint16_t h);

// Bundle directory: config.json, model.safetensors, tokenizer.json and an
// optional chat_template.json. The model id is the directory name.
std::shared_ptr<const ModelBundle> load_bundle(const std::filesystem::path& dir);
void save_bundle(const std::filesystem::path& dir, const ModelBundle& bundle, StorageDtype dtype = StorageDtype::f32);

// Reference data produced by the converter with the source framework:
//   {"tokenization": [{"text": s, "ids": [...]}, ...],
//    "logits": [{"ids": [...], "top_ids": [...], "top_values": [...]}, ...]}
// Logit cases compare the final-position logits at top_ids.
struct FixtureReport {
  std::size_t token_cases = 0;
  std::size_t token_mismatches = 0;
  std::size_t logit_cases = 0;
  double max_abs_logit_diff = 0.0;
  std::vector<std::string> failures;
};
FixtureReport verify_fixtures(const ModelBundle& bundle, const nlohmann::json& fixtures, double logit_tolerance = 1e-3);

std::string read_file(const std::filesystem::path& path);
// Writes via a temporary file and rename so readers never see a partial file.
void write_file(const std::filesystem::path& path, std::string_view content);
nlohmann::json read_json_file(const std::filesystem::path& path);

}  // namespace mdf
