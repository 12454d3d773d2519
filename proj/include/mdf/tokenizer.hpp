// Copyright 2026 The MDF Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

namespace mdf {

using TokenId = std::int32_t;

enum class TokenizerKind { byte_level, bpe };

struct SpecialToken {
  std::string name;  // "bos", "eos", or free-form
  std::string content;
  TokenId id = 0;
};

// byte_level: byte b has id b; specials follow at 256, 257, ...
// bpe: GPT-2 style byte-level BPE (bytes mapped to printable code points,
//      GPT-2 pre-tokenization, lowest-rank merge first, leftmost on ties).
// In both kinds, occurrences of a special token's content in the input text
// encode to that special id.
class Tokenizer {
 public:
  static Tokenizer byte_level(std::vector<SpecialToken> specials);
  static Tokenizer bpe(std::unordered_map<std::string, TokenId> vocab,
                       std::vector<std::pair<std::string, std::string>> merges, std::vector<SpecialToken> specials);
  static Tokenizer from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;

  TokenizerKind kind() const noexcept { return kind_; }
  std::size_t vocab_size() const noexcept { return vocab_size_; }

  std::vector<TokenId> encode(std::string_view text) const;
  std::string decode(std::span<const TokenId> ids) const;
  // Text of a single token; specials render as their content.
  std::string token_text(TokenId id) const;

  std::optional<TokenId> special(std::string_view name) const;
  std::optional<TokenId> bos() const { return special("bos"); }
  std::optional<TokenId> eos() const { return special("eos"); }
  const std::vector<SpecialToken>& specials() const noexcept { return specials_; }

 private:
  Tokenizer() = default;
  void finalize();
  void encode_plain(std::string_view text, std::vector<TokenId>& out) const;
  void encode_bpe_word(const std::string& word, std::vector<TokenId>& out) const;

  TokenizerKind kind_ = TokenizerKind::byte_level;
  std::size_t vocab_size_ = 0;
  std::vector<SpecialToken> specials_;
  std::unordered_map<std::string, TokenId> vocab_;
  std::vector<std::string> id_to_token_;
  std::vector<std::pair<std::string, std::string>> merges_;
  std::map<std::pair<std::string, std::string>, std::size_t> merge_rank_;
};

// GPT-2 pre-tokenization of UTF-8 text into words (exposed for tests).
std::vector<std::string> gpt2_pretokenize(std::string_view text);

}  // namespace mdf
