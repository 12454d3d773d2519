// Copyright 2026 The MDF Authors
// SPDX-License-Identifier: Apache-2.0

#include "mdf/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mdf/error.hpp"

namespace mdf {

namespace {

bool blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; });
}

void check_delimiters(std::string_view content, const ChatTemplate& tmpl) {
  for (const auto* a : {&tmpl.system, &tmpl.user, &tmpl.assistant}) {
    for (const std::string* d : {&a->prefix, &a->suffix}) {
      if (!d->empty() && content.find(*d) != std::string_view::npos) {
        fail(ErrorCode::invalid_argument, "message content contains template delimiter '%s'", d->c_str());
      }
    }
  }
  if (!tmpl.generation_prefix.empty() && content.find(tmpl.generation_prefix) != std::string_view::npos) {
    fail(ErrorCode::invalid_argument, "message content contains template delimiter '%s'",
         tmpl.generation_prefix.c_str());
  }
}

ChatTemplate::Affix affix_from_json(const nlohmann::json& j, const char* key) {
  const auto& a = j.at(key);
  return {a.value("prefix", std::string()), a.value("suffix", std::string())};
}

}  // namespace

Role parse_role(std::string_view s) {
  if (s == "system") return Role::system;
  if (s == "user") return Role::user;
  if (s == "assistant") return Role::assistant;
  fail(ErrorCode::format, "unknown role '%.*s'", static_cast<int>(s.size()), s.data());
}

std::string_view role_name(Role r) {
  switch (r) {
    case Role::system: return "system";
    case Role::user: return "user";
    case Role::assistant: return "assistant";
  }
  return "?";
}

Instance Instance::text(std::string s) {
  Instance inst;
  inst.raw_text = std::move(s);
  return inst;
}

Instance Instance::chat(std::vector<Message> messages) {
  Instance inst;
  inst.messages = std::move(messages);
  return inst;
}

void Instance::validate() const {
  if (raw_text) {
    if (!messages.empty()) {
      fail(ErrorCode::format, "instance has both text and messages");
    }
    if (blank(*raw_text)) {
      fail(ErrorCode::format, "instance text is empty");
    }
    return;
  }
  if (messages.empty()) {
    fail(ErrorCode::format, "instance has no messages");
  }
  for (const auto& m : messages) {
    if (blank(m.content)) {
      fail(ErrorCode::format, "%s message content is empty", std::string(role_name(m.role)).c_str());
    }
  }
}

Instance instance_from_json(const nlohmann::json& j) {
  if (!j.is_object()) {
    fail(ErrorCode::format, "instance must be a JSON object");
  }
  const bool has_text = j.contains("text");
  const bool has_messages = j.contains("messages");
  if (has_text == has_messages) {
    fail(ErrorCode::format, "instance must have exactly one of \"text\" or \"messages\"");
  }
  Instance inst;
  try {
    if (has_text) {
      inst.raw_text = j.at("text").get<std::string>();
    } else {
      for (const auto& m : j.at("messages")) {
        inst.messages.push_back({parse_role(m.at("role").get<std::string>()), m.at("content").get<std::string>()});
      }
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::format, "%s", e.what());
  }
  inst.validate();
  return inst;
}

nlohmann::json instance_to_json(const Instance& inst) {
  if (inst.raw_text) {
    return {{"text", *inst.raw_text}};
  }
  nlohmann::json msgs = nlohmann::json::array();
  for (const auto& m : inst.messages) {
    msgs.push_back({{"role", role_name(m.role)}, {"content", m.content}});
  }
  return {{"messages", msgs}};
}

Dataset parse_jsonl(std::string_view content, std::string name) {
  Dataset ds;
  ds.name = std::move(name);
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= content.size()) {
    std::size_t nl = content.find('\n', pos);
    if (nl == std::string_view::npos) {
      nl = content.size();
    }
    const std::string_view line = content.substr(pos, nl - pos);
    ++line_no;
    pos = nl + 1;
    if (blank(line)) {
      if (nl == content.size()) break;
      continue;
    }
    try {
      ds.instances.push_back(instance_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::format, "%s:%zu: %s", ds.name.c_str(), line_no, e.what());
    } catch (const Error& e) {
      fail(e.code(), "%s:%zu: %s", ds.name.c_str(), line_no, e.what());
    }
    if (nl == content.size()) break;
  }
  return ds;
}

Dataset load_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    fail(ErrorCode::io, "cannot open dataset '%s'", path.string().c_str());
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_jsonl(ss.str(), path.string());
}

RenderSource parse_render_source(std::string_view s) {
  if (s == "full") return RenderSource::full;
  if (s == "assistant_only") return RenderSource::assistant_only;
  fail(ErrorCode::invalid_argument, "unknown render source '%.*s' (expected full or assistant_only)",
       static_cast<int>(s.size()), s.data());
}

std::string_view render_source_name(RenderSource s) {
  return s == RenderSource::full ? "full" : "assistant_only";
}

const ChatTemplate::Affix& ChatTemplate::affix(Role r) const {
  switch (r) {
    case Role::system: return system;
    case Role::user: return user;
    case Role::assistant: return assistant;
  }
  return user;
}

ChatTemplate ChatTemplate::default_template() {
  ChatTemplate t;
  t.system = {"<|s|>", "<|/s|>"};
  t.user = {"<|u|>", "<|/u|>"};
  t.assistant = {"<|a|>", "<|/a|>"};
  t.generation_prefix = "<|a|>";
  return t;
}

ChatTemplate ChatTemplate::from_json(const nlohmann::json& j) {
  try {
    ChatTemplate t;
    t.system = affix_from_json(j, "system");
    t.user = affix_from_json(j, "user");
    t.assistant = affix_from_json(j, "assistant");
    t.generation_prefix = j.value("generation_prefix", t.assistant.prefix);
    return t;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::format, "chat_template.json: %s", e.what());
  }
}

nlohmann::json ChatTemplate::to_json() const {
  auto a = [](const Affix& x) { return nlohmann::json{{"prefix", x.prefix}, {"suffix", x.suffix}}; };
  return {{"system", a(system)},
          {"user", a(user)},
          {"assistant", a(assistant)},
          {"generation_prefix", generation_prefix}};
}

std::string render_chat(const Instance& inst, const ChatTemplate& tmpl, RenderSource source) {
  if (inst.raw_text) {
    return *inst.raw_text;
  }
  std::string out;
  for (const auto& m : inst.messages) {
    if (source == RenderSource::assistant_only && m.role != Role::assistant) {
      continue;
    }
    check_delimiters(m.content, tmpl);
    const auto& a = tmpl.affix(m.role);
    out += a.prefix;
    out += m.content;
    out += a.suffix;
  }
  if (out.empty()) {
    fail(ErrorCode::invalid_argument, "instance renders to empty text (no assistant message for assistant_only)");
  }
  return out;
}

std::string render_prompt(const Instance& inst, const ChatTemplate& tmpl) {
  if (inst.raw_text) {
    return *inst.raw_text;
  }
  return render_chat(inst, tmpl) + tmpl.generation_prefix;
}

}  // namespace mdf
