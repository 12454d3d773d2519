// Copyright 2026 The MDF Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace mdf {

enum class Role { system, user, assistant };

Role parse_role(std::string_view s);
std::string_view role_name(Role r);

struct Message {
  Role role = Role::user;
  std::string content;
};

// Either a chat (messages) or a plain text instance, never both.
struct Instance {
  std::vector<Message> messages;
  std::optional<std::string> raw_text;

  static Instance text(std::string s);
  static Instance chat(std::vector<Message> messages);

  bool is_chat() const noexcept { return !raw_text.has_value(); }
  void validate() const;
};

Instance instance_from_json(const nlohmann::json& j);
nlohmann::json instance_to_json(const Instance& inst);

struct Dataset {
  std::string name;
  std::vector<Instance> instances;

  std::size_t size() const noexcept { return instances.size(); }
};

// Probe prompts share the instance representation.
using PromptSet = Dataset;

// One JSON object per line; blank lines are skipped. Order is preserved.
Dataset load_jsonl(const std::filesystem::path& path);
Dataset parse_jsonl(std::string_view content, std::string name);

enum class RenderSource { full, assistant_only };

RenderSource parse_render_source(std::string_view s);
std::string_view render_source_name(RenderSource s);

// Per-role prefix/suffix concatenation. Rendering of a chat is
//   for each message: prefix(role) + content + suffix(role)
// and a probe prompt additionally ends with generation_prefix.
struct ChatTemplate {
  struct Affix {
    std::string prefix;
    std::string suffix;
  };
  Affix system;
  Affix user;
  Affix assistant;
  std::string generation_prefix;

  const Affix& affix(Role r) const;

  static ChatTemplate default_template();
  static ChatTemplate from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

// raw_text instances render unchanged. Content containing any non-empty
// template delimiter is rejected so rendering stays injective.
std::string render_chat(const Instance& inst, const ChatTemplate& tmpl, RenderSource source = RenderSource::full);
std::string render_prompt(const Instance& inst, const ChatTemplate& tmpl);

}  // namespace mdf
