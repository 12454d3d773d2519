// Copyright 2026 The MDF Authors
// SPDX-License-Identifier: Apache-2.0

#include "mdf/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mdf/error.hpp"

namespace mdf {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "safetensors I/O assumes a little-endian host");

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    fail(ErrorCode::io, "cannot open '%s'", path.string().c_str());
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, std::string_view content) {
  if (path.has_parent_path()) {
    fs::create_directories(path.parent_path());
  }
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      fail(ErrorCode::io, "cannot write '%s'", tmp.string().c_str());
    }
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) {
      fail(ErrorCode::io, "short write to '%s'", tmp.string().c_str());
    }
  }
  fs::rename(tmp, path);
}

nlohmann::json read_json_file(const fs::path& path) {
  const std::string text = read_file(path);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::format, "%s: %s", path.string().c_str(), e.what());
  }
}

std::uint16_t f32_to_f16(float f) {
  const std::uint32_t x = std::bit_cast<std::uint32_t>(f);
  const std::uint32_t sign = (x >> 16) & 0x8000u;
  const std::uint32_t exp = (x >> 23) & 0xFFu;
  std::uint32_t mant = x & 0x7FFFFFu;
  if (exp == 0xFF) {
    return static_cast<std::uint16_t>(sign | 0x7C00u | (mant ? 0x200u : 0u));
  }
  const int e = static_cast<int>(exp) - 127 + 15;
  if (e >= 0x1F) {
    return static_cast<std::uint16_t>(sign | 0x7C00u);
  }
  if (e <= 0) {
    if (e < -10) {
      return static_cast<std::uint16_t>(sign);
    }
    mant |= 0x800000u;
    const int shift = 14 - e;
    std::uint32_t half = mant >> shift;
    const std::uint32_t rem = mant & ((1u << shift) - 1u);
    const std::uint32_t mid = 1u << (shift - 1);
    if (rem > mid || (rem == mid && (half & 1u))) {
      ++half;
    }
    return static_cast<std::uint16_t>(sign | half);
  }
  std::uint32_t half = sign | (static_cast<std::uint32_t>(e) << 10) | (mant >> 13);
  const std::uint32_t rem = mant & 0x1FFFu;
  if (rem > 0x1000u || (rem == 0x1000u && (half & 1u))) {
    ++half;  // may carry into the exponent, which is the correct rounding
  }
  return static_cast<std::uint16_t>(half);
}

float f16_to_f32(std::uint16_t h) {
  const std::uint32_t sign = (static_cast<std::uint32_t>(h) & 0x8000u) << 16;
  const std::uint32_t exp = (h >> 10) & 0x1Fu;
  std::uint32_t mant = h & 0x3FFu;
  std::uint32_t bits;
  if (exp == 0) {
    if (mant == 0) {
      bits = sign;
    } else {
      int e = -1;
      do {
        ++e;
        mant <<= 1;
      } while ((mant & 0x400u) == 0);
      bits = sign | (static_cast<std::uint32_t>(127 - 15 - e) << 23) | ((mant & 0x3FFu) << 13);
    }
  } else if (exp == 0x1F) {
    bits = sign | 0x7F800000u | (mant << 13);
  } else {
    bits = sign | ((exp + 127 - 15) << 23) | (mant << 13);
  }
  return std::bit_cast<float>(bits);
}

SafetensorsFile parse_safetensors(std::string_view bytes) {
  if (bytes.size() < 8) {
    fail(ErrorCode::format, "safetensors: file is %zu bytes, too short for the header length field (bytes 0..8)",
         bytes.size());
  }
  std::uint64_t header_len = 0;
  std::memcpy(&header_len, bytes.data(), 8);
  if (header_len == 0 || header_len > bytes.size() - 8) {
    fail(ErrorCode::format,
         "safetensors: invalid header length %llu in length field (bytes 0..8); file has %zu bytes after it",
         static_cast<unsigned long long>(header_len), bytes.size() - 8);
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(8, header_len));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::format, "safetensors: malformed header JSON at bytes 8..%llu: %s",
         static_cast<unsigned long long>(8 + header_len), e.what());
  }
  if (!header.is_object()) {
    fail(ErrorCode::format, "safetensors: header is not a JSON object");
  }
  const std::string_view data = bytes.substr(8 + header_len);

  SafetensorsFile out;
  for (const auto& [name, info] : header.items()) {
    if (name == "__metadata__") {
      continue;
    }
    std::string dtype;
    std::vector<std::size_t> shape;
    std::uint64_t begin = 0, end = 0;
    try {
      dtype = info.at("dtype").get<std::string>();
      shape = info.at("shape").get<std::vector<std::size_t>>();
      const auto& off = info.at("data_offsets");
      begin = off.at(0).get<std::uint64_t>();
      end = off.at(1).get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::format, "safetensors: bad entry for '%s': %s", name.c_str(), e.what());
    }
    std::size_t elem = 0;
    if (dtype == "F32") {
      elem = 4;
    } else if (dtype == "F16") {
      elem = 2;
    } else {
      fail(ErrorCode::format, "safetensors: tensor '%s' has unsupported dtype %s (only F32 and F16 are accepted)",
           name.c_str(), dtype.c_str());
    }
    std::size_t numel = 1;
    for (std::size_t s : shape) {
      numel *= s;
    }
    if (end < begin || end > data.size() || end - begin != numel * elem) {
      fail(ErrorCode::format, "safetensors: tensor '%s' data_offsets [%llu, %llu] inconsistent with shape %s",
           name.c_str(), static_cast<unsigned long long>(begin), static_cast<unsigned long long>(end),
           shape_to_string(shape).c_str());
    }
    std::vector<float> values(numel);
    const char* src = data.data() + begin;
    if (elem == 4) {
      std::memcpy(values.data(), src, numel * 4);
    } else {
      out.had_f16 = true;
      for (std::size_t i = 0; i < numel; ++i) {
        std::uint16_t h;
        std::memcpy(&h, src + 2 * i, 2);
        values[i] = f16_to_f32(h);
      }
    }
    out.tensors.emplace(name, Tensor(std::move(shape), std::move(values)));
  }
  return out;
}

SafetensorsFile read_safetensors(const fs::path& path) {
  const std::string bytes = read_file(path);
  try {
    return parse_safetensors(bytes);
  } catch (const Error& e) {
    fail(e.code(), "%s: %s", path.string().c_str(), e.what());
  }
}

std::string serialize_safetensors(const std::map<std::string, Tensor>& tensors, StorageDtype dtype) {
  const std::size_t elem = dtype == StorageDtype::f32 ? 4 : 2;
  nlohmann::json header = nlohmann::json::object();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    const std::uint64_t size = t.numel() * elem;
    header[name] = {{"dtype", dtype == StorageDtype::f32 ? "F32" : "F16"},
                    {"shape", t.shape()},
                    {"data_offsets", {offset, offset + size}}};
    offset += size;
  }
  std::string h = header.dump();
  while ((8 + h.size()) % 8 != 0) {
    h += ' ';
  }
  std::string out(8, '\0');
  const std::uint64_t n = h.size();
  std::memcpy(out.data(), &n, 8);
  out += h;
  out.reserve(out.size() + offset);
  for (const auto& [name, t] : tensors) {
    if (dtype == StorageDtype::f32) {
      out.append(reinterpret_cast<const char*>(t.data().data()), t.numel() * 4);
    } else {
      for (float v : t.data()) {
        const std::uint16_t half = f32_to_f16(v);
        out.append(reinterpret_cast<const char*>(&half), 2);
      }
    }
  }
  return out;
}

void write_safetensors(const fs::path& path, const std::map<std::string, Tensor>& tensors, StorageDtype dtype) {
  write_file(path, serialize_safetensors(tensors, dtype));
}

std::shared_ptr<const ModelBundle> load_bundle(const fs::path& dir) {
  if (!fs::is_directory(dir)) {
    fail(ErrorCode::io, "model bundle '%s' is not a directory", dir.string().c_str());
  }
  for (const char* f : {"config.json", "model.safetensors", "tokenizer.json"}) {
    if (!fs::exists(dir / f)) {
      fail(ErrorCode::io, "model bundle '%s' is missing %s", dir.string().c_str(), f);
    }
  }
  const ModelConfig config = ModelConfig::from_json(read_json_file(dir / "config.json"));
  Tokenizer tokenizer = Tokenizer::from_json(read_json_file(dir / "tokenizer.json"));
  ChatTemplate tmpl = ChatTemplate::default_template();
  if (fs::exists(dir / "chat_template.json")) {
    tmpl = ChatTemplate::from_json(read_json_file(dir / "chat_template.json"));
  }
  SafetensorsFile st = read_safetensors(dir / "model.safetensors");
  fs::path canonical = fs::weakly_canonical(dir);
  std::string id = canonical.filename().string();
  if (id.empty()) {
    id = canonical.parent_path().filename().string();
  }
  return ModelBundle::create(id, config, std::move(st.tensors), std::move(tokenizer), std::move(tmpl), st.had_f16);
}

void save_bundle(const fs::path& dir, const ModelBundle& bundle, StorageDtype dtype) {
  fs::create_directories(dir);
  write_file(dir / "config.json", bundle.config().to_json().dump(2) + "\n");
  write_file(dir / "tokenizer.json", bundle.tokenizer().to_json().dump(2) + "\n");
  write_file(dir / "chat_template.json", bundle.chat_template().to_json().dump(2) + "\n");
  write_safetensors(dir / "model.safetensors", bundle.tensors(), dtype);
}

FixtureReport verify_fixtures(const ModelBundle& bundle, const nlohmann::json& fixtures, double logit_tolerance) {
  FixtureReport r;
  try {
    if (fixtures.contains("tokenization")) {
      for (const auto& c : fixtures.at("tokenization")) {
        const std::string text = c.at("text").get<std::string>();
        const auto expected = c.at("ids").get<std::vector<TokenId>>();
        ++r.token_cases;
        if (bundle.tokenizer().encode(text) != expected) {
          ++r.token_mismatches;
          r.failures.push_back("tokenization differs for " + nlohmann::json(text).dump());
        }
      }
    }
    if (fixtures.contains("logits")) {
      for (const auto& c : fixtures.at("logits")) {
        const auto ids = c.at("ids").get<std::vector<TokenId>>();
        const auto top_ids = c.at("top_ids").get<std::vector<TokenId>>();
        const auto top_values = c.at("top_values").get<std::vector<double>>();
        if (ids.empty() || top_ids.size() != top_values.size()) {
          fail(ErrorCode::format, "fixtures: malformed logit case");
        }
        ++r.logit_cases;
        const ForwardTrace trace = forward(bundle, ids);
        const auto last = trace.logits.row(ids.size() - 1);
        double worst = 0.0;
        for (std::size_t k = 0; k < top_ids.size(); ++k) {
          if (top_ids[k] < 0 || static_cast<std::size_t>(top_ids[k]) >= last.size()) {
            fail(ErrorCode::format, "fixtures: token id %d outside the vocabulary", top_ids[k]);
          }
          worst = std::max(worst, std::abs(static_cast<double>(last[static_cast<std::size_t>(top_ids[k])]) -
                                           top_values[k]));
        }
        r.max_abs_logit_diff = std::max(r.max_abs_logit_diff, worst);
        if (worst > logit_tolerance) {
          r.failures.push_back(strprintf("logit case %zu differs by %.3g", r.logit_cases - 1, worst));
        }
      }
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::format, "fixtures: %s", e.what());
  }
  return r;
}

}  // namespace mdf
