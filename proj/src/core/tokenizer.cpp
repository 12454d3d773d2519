// Copyright 2026 The MDF Authors
// SPDX-License-Identifier: Apache-2.0

#include "mdf/tokenizer.hpp"

#include <algorithm>
#include <array>
#include <limits>
#include <memory>
#include <mutex>

#include <nlohmann/json.hpp>
#include <unicode/regex.h>
#include <unicode/unistr.h>

#include "mdf/error.hpp"

namespace mdf {

namespace {

constexpr std::string_view kGpt2Pattern =
    R"('s|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+)";

void append_utf8(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out += static_cast<char>(cp);
  } else if (cp < 0x800) {
    out += static_cast<char>(0xC0 | (cp >> 6));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else if (cp < 0x10000) {
    out += static_cast<char>(0xE0 | (cp >> 12));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else {
    out += static_cast<char>(0xF0 | (cp >> 18));
    out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  }
}

// Splits a UTF-8 string into code point substrings. Invalid bytes become
// single-byte pieces so nothing is dropped.
std::vector<std::string> utf8_chars(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t len = 1;
    if (c >= 0xF0 && c < 0xF8) {
      len = 4;
    } else if (c >= 0xE0) {
      len = c < 0xF0 ? 3 : 1;
    } else if (c >= 0xC0) {
      len = 2;
    }
    if (i + len > s.size()) {
      len = 1;
    }
    out.emplace_back(s.substr(i, len));
    i += len;
  }
  return out;
}

// GPT-2 bytes_to_unicode(): printable bytes map to themselves, the rest to
// code points from 256 upward.
struct ByteMap {
  std::array<std::string, 256> byte_to_text;
  std::unordered_map<std::string, unsigned char> text_to_byte;

  ByteMap() {
    std::vector<int> printable;
    for (int b = '!'; b <= '~'; ++b) printable.push_back(b);
    for (int b = 0xA1; b <= 0xAC; ++b) printable.push_back(b);
    for (int b = 0xAE; b <= 0xFF; ++b) printable.push_back(b);
    std::array<char32_t, 256> cps{};
    std::array<bool, 256> used{};
    for (int b : printable) {
      cps[b] = static_cast<char32_t>(b);
      used[b] = true;
    }
    char32_t extra = 256;
    for (int b = 0; b < 256; ++b) {
      if (!used[b]) {
        cps[b] = extra++;
      }
    }
    for (int b = 0; b < 256; ++b) {
      std::string t;
      append_utf8(t, cps[b]);
      byte_to_text[b] = t;
      text_to_byte[t] = static_cast<unsigned char>(b);
    }
  }
};

const ByteMap& byte_map() {
  static const ByteMap map;
  return map;
}

TokenizerKind parse_kind(const std::string& s) {
  if (s == "byte_level") return TokenizerKind::byte_level;
  if (s == "bpe") return TokenizerKind::bpe;
  fail(ErrorCode::format, "tokenizer.json: unknown kind '%s' (expected byte_level or bpe)", s.c_str());
}

}  // namespace

std::vector<std::string> gpt2_pretokenize(std::string_view text) {
  UErrorCode status = U_ZERO_ERROR;
  static const std::unique_ptr<icu::RegexPattern> pattern = [] {
    UErrorCode st = U_ZERO_ERROR;
    std::unique_ptr<icu::RegexPattern> p(icu::RegexPattern::compile(
        icu::UnicodeString::fromUTF8(icu::StringPiece(kGpt2Pattern.data(), static_cast<int32_t>(kGpt2Pattern.size()))),
        0, st));
    if (U_FAILURE(st)) {
      fail(ErrorCode::internal, "failed to compile pre-tokenizer pattern: %s", u_errorName(st));
    }
    return p;
  }();

  const icu::UnicodeString input =
      icu::UnicodeString::fromUTF8(icu::StringPiece(text.data(), static_cast<int32_t>(text.size())));
  std::unique_ptr<icu::RegexMatcher> matcher(pattern->matcher(input, status));
  if (U_FAILURE(status)) {
    fail(ErrorCode::internal, "pre-tokenizer matcher: %s", u_errorName(status));
  }
  std::vector<std::string> words;
  while (matcher->find(status) && U_SUCCESS(status)) {
    const int32_t start = matcher->start(status);
    const int32_t end = matcher->end(status);
    std::string w;
    input.tempSubStringBetween(start, end).toUTF8String(w);
    words.push_back(std::move(w));
  }
  return words;
}

Tokenizer Tokenizer::byte_level(std::vector<SpecialToken> specials) {
  Tokenizer t;
  t.kind_ = TokenizerKind::byte_level;
  t.specials_ = std::move(specials);
  t.vocab_size_ = 256 + t.specials_.size();
  t.finalize();
  return t;
}

Tokenizer Tokenizer::bpe(std::unordered_map<std::string, TokenId> vocab,
                         std::vector<std::pair<std::string, std::string>> merges, std::vector<SpecialToken> specials) {
  Tokenizer t;
  t.kind_ = TokenizerKind::bpe;
  t.vocab_ = std::move(vocab);
  t.merges_ = std::move(merges);
  t.specials_ = std::move(specials);
  TokenId max_id = -1;
  for (const auto& [tok, id] : t.vocab_) {
    max_id = std::max(max_id, id);
  }
  for (const auto& s : t.specials_) {
    max_id = std::max(max_id, s.id);
  }
  t.vocab_size_ = static_cast<std::size_t>(max_id + 1);
  t.finalize();
  return t;
}

void Tokenizer::finalize() {
  id_to_token_.assign(vocab_size_, std::string());
  std::vector<bool> seen(vocab_size_, false);
  if (kind_ == TokenizerKind::byte_level) {
    for (std::size_t b = 0; b < 256; ++b) {
      id_to_token_[b] = std::string(1, static_cast<char>(b));
      seen[b] = true;
    }
  } else {
    for (const auto& [tok, id] : vocab_) {
      if (id < 0 || seen[static_cast<std::size_t>(id)]) {
        fail(ErrorCode::format, "tokenizer: duplicate or negative id %d for token '%s'", id, tok.c_str());
      }
      id_to_token_[static_cast<std::size_t>(id)] = tok;
      seen[static_cast<std::size_t>(id)] = true;
    }
    for (std::size_t r = 0; r < merges_.size(); ++r) {
      merge_rank_.emplace(merges_[r], r);
    }
  }
  for (std::size_t i = 0; i < specials_.size(); ++i) {
    const auto& s = specials_[i];
    if (s.content.empty()) {
      fail(ErrorCode::format, "tokenizer: special token '%s' has empty content", s.name.c_str());
    }
    if (kind_ == TokenizerKind::byte_level && s.id != static_cast<TokenId>(256 + i)) {
      fail(ErrorCode::format, "tokenizer: byte_level special '%s' must have id %zu, got %d", s.content.c_str(),
           256 + i, s.id);
    }
    if (s.id < 0 || static_cast<std::size_t>(s.id) >= vocab_size_) {
      fail(ErrorCode::format, "tokenizer: special id %d out of range", s.id);
    }
    if (kind_ == TokenizerKind::bpe && seen[static_cast<std::size_t>(s.id)] &&
        id_to_token_[static_cast<std::size_t>(s.id)] != s.content) {
      fail(ErrorCode::format, "tokenizer: special id %d collides with vocab entry", s.id);
    }
    id_to_token_[static_cast<std::size_t>(s.id)] = s.content;
    seen[static_cast<std::size_t>(s.id)] = true;
  }
  for (std::size_t i = 0; i < vocab_size_; ++i) {
    if (!seen[i]) {
      fail(ErrorCode::format, "tokenizer: ids are not dense, id %zu has no token", i);
    }
  }
}

Tokenizer Tokenizer::from_json(const nlohmann::json& j) {
  try {
    const TokenizerKind kind = parse_kind(j.at("kind").get<std::string>());
    std::vector<SpecialToken> specials;
    if (j.contains("specials")) {
      for (const auto& s : j.at("specials")) {
        specials.push_back({s.value("name", std::string()), s.at("content").get<std::string>(),
                            s.at("id").get<TokenId>()});
      }
    }
    if (kind == TokenizerKind::byte_level) {
      return byte_level(std::move(specials));
    }
    std::unordered_map<std::string, TokenId> vocab;
    for (const auto& [tok, id] : j.at("vocab").items()) {
      vocab.emplace(tok, id.get<TokenId>());
    }
    // Specials listed inline in the vocab are fine; drop them from the plain vocab.
    for (const auto& s : specials) {
      auto it = vocab.find(s.content);
      if (it != vocab.end() && it->second == s.id) {
        vocab.erase(it);
      }
    }
    std::vector<std::pair<std::string, std::string>> merges;
    for (const auto& m : j.at("merges")) {
      if (m.is_array()) {
        merges.emplace_back(m.at(0).get<std::string>(), m.at(1).get<std::string>());
      } else {
        const auto s = m.get<std::string>();
        const auto sp = s.find(' ');
        if (sp == std::string::npos || sp == 0 || sp + 1 >= s.size()) {
          fail(ErrorCode::format, "tokenizer.json: malformed merge '%s'", s.c_str());
        }
        merges.emplace_back(s.substr(0, sp), s.substr(sp + 1));
      }
    }
    return bpe(std::move(vocab), std::move(merges), std::move(specials));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::format, "tokenizer.json: %s", e.what());
  }
}

nlohmann::json Tokenizer::to_json() const {
  nlohmann::json j;
  j["kind"] = kind_ == TokenizerKind::byte_level ? "byte_level" : "bpe";
  nlohmann::json sp = nlohmann::json::array();
  for (const auto& s : specials_) {
    sp.push_back({{"name", s.name}, {"content", s.content}, {"id", s.id}});
  }
  j["specials"] = sp;
  if (kind_ == TokenizerKind::bpe) {
    nlohmann::json v = nlohmann::json::object();
    for (const auto& [tok, id] : vocab_) {
      v[tok] = id;
    }
    j["vocab"] = v;
    nlohmann::json m = nlohmann::json::array();
    for (const auto& [a, b] : merges_) {
      m.push_back(a + " " + b);
    }
    j["merges"] = m;
  }
  return j;
}

std::optional<TokenId> Tokenizer::special(std::string_view name) const {
  for (const auto& s : specials_) {
    if (s.name == name) {
      return s.id;
    }
  }
  return std::nullopt;
}

std::vector<TokenId> Tokenizer::encode(std::string_view text) const {
  std::vector<TokenId> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    // Earliest special occurrence; longest content wins at equal offsets.
    std::size_t best_at = std::string_view::npos;
    const SpecialToken* best = nullptr;
    for (const auto& s : specials_) {
      const std::size_t at = text.find(s.content, pos);
      if (at == std::string_view::npos) continue;
      if (at < best_at || (at == best_at && s.content.size() > best->content.size())) {
        best_at = at;
        best = &s;
      }
    }
    if (best == nullptr) {
      encode_plain(text.substr(pos), out);
      break;
    }
    encode_plain(text.substr(pos, best_at - pos), out);
    out.push_back(best->id);
    pos = best_at + best->content.size();
  }
  return out;
}

void Tokenizer::encode_plain(std::string_view text, std::vector<TokenId>& out) const {
  if (text.empty()) {
    return;
  }
  if (kind_ == TokenizerKind::byte_level) {
    for (char c : text) {
      out.push_back(static_cast<TokenId>(static_cast<unsigned char>(c)));
    }
    return;
  }
  const auto& bm = byte_map();
  for (const std::string& word : gpt2_pretokenize(text)) {
    std::string mapped;
    for (char c : word) {
      mapped += bm.byte_to_text[static_cast<unsigned char>(c)];
    }
    encode_bpe_word(mapped, out);
  }
}

void Tokenizer::encode_bpe_word(const std::string& word, std::vector<TokenId>& out) const {
  std::vector<std::string> parts = utf8_chars(word);
  while (parts.size() > 1) {
    std::size_t best_rank = std::numeric_limits<std::size_t>::max();
    std::size_t best_i = 0;
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
      auto it = merge_rank_.find({parts[i], parts[i + 1]});
      if (it != merge_rank_.end() && it->second < best_rank) {
        best_rank = it->second;
        best_i = i;
      }
    }
    if (best_rank == std::numeric_limits<std::size_t>::max()) {
      break;
    }
    parts[best_i] += parts[best_i + 1];
    parts.erase(parts.begin() + static_cast<std::ptrdiff_t>(best_i) + 1);
  }
  for (const auto& p : parts) {
    auto it = vocab_.find(p);
    if (it == vocab_.end()) {
      fail(ErrorCode::format, "bpe: symbol '%s' is not in the vocabulary", p.c_str());
    }
    out.push_back(it->second);
  }
}

std::string Tokenizer::token_text(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= vocab_size_) {
    fail(ErrorCode::range, "token id %d out of range [0, %zu)", id, vocab_size_);
  }
  const std::string& tok = id_to_token_[static_cast<std::size_t>(id)];
  if (kind_ == TokenizerKind::byte_level) {
    return tok;
  }
  for (const auto& s : specials_) {
    if (s.id == id) {
      return s.content;
    }
  }
  const auto& bm = byte_map();
  std::string bytes;
  for (const auto& ch : utf8_chars(tok)) {
    auto it = bm.text_to_byte.find(ch);
    if (it == bm.text_to_byte.end()) {
      bytes += ch;
    } else {
      bytes += static_cast<char>(it->second);
    }
  }
  return bytes;
}

std::string Tokenizer::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (TokenId id : ids) {
    out += token_text(id);
  }
  return out;
}

}  // namespace mdf
