// Copyright 2026 The MDF Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstdlib>
#include <regex>

#ifdef MDF_WITH_OPENSSL
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "mdf/error.hpp"
#include "mdf/evaluator.hpp"

namespace mdf {

using nlohmann::json;

std::string default_judge_rubric() {
  return
#include "default_rubric.inc"
      ;
}

JudgeConfig JudgeConfig::from_json(const json& j) {
  JudgeConfig c;
  try {
    c.url = j.at("url").get<std::string>();
    c.model = j.at("model").get<std::string>();
    c.token = j.value("token", std::string());
    c.timeout_s = j.value("timeout_s", 60.0);
  } catch (const json::exception& e) {
    fail(ErrorCode::invalid_argument, "judge config: %s", e.what());
  }
  if (c.token.empty()) {
    if (const char* env = std::getenv("MDF_JUDGE_TOKEN")) {
      c.token = env;
    }
  }
  if (!(c.timeout_s > 0.0)) {
    fail(ErrorCode::invalid_argument, "judge timeout_s must be > 0");
  }
  return c;
}

JudgeClient::JudgeClient(JudgeConfig config) : config_(std::move(config)) {
  static const std::regex url_re(R"(^(https?)://([^/]+)(/.*)?$)");
  if (!std::regex_match(config_.url, url_re)) {
    fail(ErrorCode::invalid_argument, "judge url must look like http(s)://host[:port]/path, got '%s'",
         config_.url.c_str());
  }
#ifndef MDF_WITH_OPENSSL
  if (config_.url.rfind("https://", 0) == 0) {
    fail(ErrorCode::invalid_argument, "this build has no TLS support; use an http:// judge url");
  }
#endif
}

std::string JudgeClient::complete(const std::string& system_prompt, const std::string& user_content) const {
  static const std::regex url_re(R"(^(https?)://([^/]+)(/.*)?$)");
  std::smatch m;
  std::regex_match(config_.url, m, url_re);
  const std::string base = m[1].str() + "://" + m[2].str();
  const std::string path = m[3].matched ? m[3].str() : "/";

  httplib::Client cli(base);
  const auto secs = static_cast<time_t>(config_.timeout_s);
  const auto usecs = static_cast<time_t>((config_.timeout_s - static_cast<double>(secs)) * 1e6);
  cli.set_connection_timeout(secs, usecs);
  cli.set_read_timeout(secs, usecs);
  cli.set_write_timeout(secs, usecs);
  httplib::Headers headers;
  if (!config_.token.empty()) {
    headers.emplace("Authorization", "Bearer " + config_.token);
  }
  const json body = {{"model", config_.model},
                     {"messages",
                      {{{"role", "system"}, {"content", system_prompt}}, {{"role", "user"}, {"content", user_content}}}},
                     {"temperature", 0}};
  auto res = cli.Post(path, headers, body.dump(-1, ' ', false, json::error_handler_t::replace), "application/json");
  if (!res) {
    fail(ErrorCode::evaluator, "judge request to %s failed: %s", config_.url.c_str(),
         httplib::to_string(res.error()).c_str());
  }
  if (res->status == 401 || res->status == 403) {
    fail(ErrorCode::evaluator, "judge rejected the credentials (HTTP %d); set MDF_JUDGE_TOKEN", res->status);
  }
  if (res->status != 200) {
    fail(ErrorCode::evaluator, "judge returned HTTP %d", res->status);
  }
  try {
    const json r = json::parse(res->body);
    return r.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const json::exception& e) {
    fail(ErrorCode::evaluator, "judge reply is not a chat completion: %s", e.what());
  }
}

}  // namespace mdf
