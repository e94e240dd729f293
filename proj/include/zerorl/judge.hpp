#pragma once

// LLM-judge behavior classification over an OpenAI-compatible
// chat-completions endpoint. Failures never propagate as exceptions past
// judge_classify: they come back as unlabeled outcomes with a reason.

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "zerorl/behavior.hpp"
#include "zerorl/errors.hpp"

namespace zerorl {

struct JudgeConfig {
  std::string base_url;  // e.g. "https://api.openai.com/v1"
  std::string api_key;
  std::string model_name = "gpt-4o";
  double timeout_seconds = 30.0;
  int max_concurrent = 4;
  int retries = 2;  // extra attempts after the first
  int backoff_ms = 250;

  void validate() const {
    if (api_key.empty()) throw ConfigError("api_key", "judge API key is not set");
    if (base_url.empty()) throw ConfigError("base_url", "judge base URL is not set");
    if (!(timeout_seconds > 0.0)) throw ConfigError("timeout", "must be positive");
    if (max_concurrent < 1) throw ConfigError("max_concurrent", "must be at least 1");
    if (retries < 0) throw ConfigError("retries", "must be non-negative");
  }

  // ZF_JUDGE_BASE_URL, ZF_JUDGE_API_KEY, ZF_JUDGE_MODEL.
  static JudgeConfig from_env() {
    JudgeConfig c;
    auto get = [](const char* name) -> std::string {
      const char* v = std::getenv(name);
      return v ? v : "";
    };
    c.base_url = get("ZF_JUDGE_BASE_URL");
    c.api_key = get("ZF_JUDGE_API_KEY");
    if (auto m = get("ZF_JUDGE_MODEL"); !m.empty()) c.model_name = m;
    return c;
  }
};

enum class UnlabeledReason { timeout, bad_status, unparseable, transport };

inline std::string_view to_string(UnlabeledReason r) {
  switch (r) {
    case UnlabeledReason::timeout: return "timeout";
    case UnlabeledReason::bad_status: return "bad_status";
    case UnlabeledReason::unparseable: return "unparseable";
    case UnlabeledReason::transport: return "transport";
  }
  return "?";
}

struct JudgeOutcome {
  MaybeLabels labels;  // nullopt when unlabeled
  std::optional<UnlabeledReason> reason;
  int attempts = 0;
  std::string detail;
};

using JudgeLog = std::function<void(const std::string&)>;

inline JudgeLog stderr_judge_log() {
  return [](const std::string& line) {
    static std::mutex mu;
    std::lock_guard<std::mutex> lock(mu);
    std::clog << "[judge] " << line << '\n';
  };
}

inline const std::string& judge_instructions() {
  static const std::string kPrompt =
      "You will be shown a model's response to a math problem. Decide which of the following "
      "reasoning behaviors the response exhibits.\n\n"
      "(1) Backtracking: The model actively identifies errors during response generation and "
      "explicitly revises previously used methods.\n"
      "(2) Verification: The model systematically checks intermediate results to ensure "
      "correctness.\n"
      "(3) Subgoal Setting: The model decomposes complex problems into smaller, manageable "
      "steps.\n"
      "(4) Enumeration: The model exhaustively considers multiple cases or possibilities to "
      "solve problems.\n\n"
      "Answer with a bracketed list of the behavior names that are present, for example "
      "[Verification, Enumeration]. If none are present, answer [].";
  return kPrompt;
}

inline nlohmann::json build_judge_request(const JudgeConfig& cfg, std::string_view response_text) {
  return {{"model", cfg.model_name},
          {"temperature", 0},
          {"messages",
           nlohmann::json::array(
               {{{"role", "system"}, {"content", judge_instructions()}},
                {{"role", "user"}, {"content", "Response:\n" + std::string(response_text)}}})}};
}

// Lenient: any label name anywhere counts. A reply naming no label is an
// explicit empty set only if it says "none" or contains "[]".
inline MaybeLabels parse_judge_reply(std::string_view reply) {
  std::string lower(reply);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  auto has = [&](std::string_view s) { return lower.find(s) != std::string::npos; };
  LabelSet out;
  if (has("backtracking")) out.insert(BehaviorLabel::Backtracking);
  if (has("verification")) out.insert(BehaviorLabel::Verification);
  if (has("subgoal setting") || has("subgoalsetting") || has("subgoal_setting") ||
      has("subgoal-setting"))
    out.insert(BehaviorLabel::SubgoalSetting);
  if (has("enumeration")) out.insert(BehaviorLabel::Enumeration);
  if (!out.empty() || has("none") || has("[]")) return out;
  return std::nullopt;
}

namespace detail {

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string path;    // request path
};

inline Endpoint split_endpoint(const std::string& base_url) {
  const auto scheme = base_url.find("://");
  if (scheme == std::string::npos) throw ConfigError("base_url", "missing scheme");
  const auto slash = base_url.find('/', scheme + 3);
  Endpoint ep;
  ep.origin = base_url.substr(0, slash);
  std::string prefix = slash == std::string::npos ? "" : base_url.substr(slash);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  ep.path = prefix + "/chat/completions";
  return ep;
}

}  // namespace detail

inline JudgeOutcome judge_classify(const JudgeConfig& cfg, std::string_view response_text,
                                   const JudgeLog& log = stderr_judge_log()) {
  cfg.validate();
  const detail::Endpoint ep = detail::split_endpoint(cfg.base_url);
  const std::string body = build_judge_request(cfg, response_text).dump();
  const auto timeout = std::chrono::duration<double>(cfg.timeout_seconds);
  const auto timeout_us = std::chrono::duration_cast<std::chrono::microseconds>(timeout);

  JudgeOutcome out;
  for (int attempt = 0; attempt <= cfg.retries; ++attempt) {
    if (attempt > 0 && cfg.backoff_ms > 0)
      std::this_thread::sleep_for(std::chrono::milliseconds(cfg.backoff_ms * attempt));
    out.attempts = attempt + 1;

    httplib::Client client(ep.origin);
    client.set_connection_timeout(timeout_us);
    client.set_read_timeout(timeout_us);
    client.set_write_timeout(timeout_us);
    const httplib::Headers headers{{"Authorization", "Bearer " + cfg.api_key}};
    const auto start = std::chrono::steady_clock::now();
    auto res = client.Post(ep.path, headers, body, "application/json");
    const auto elapsed = std::chrono::steady_clock::now() - start;

    if (!res) {
      const bool timed_out = res.error() == httplib::Error::ConnectionTimeout ||
                             (res.error() == httplib::Error::Read && elapsed >= timeout * 0.9);
      out.reason = timed_out ? UnlabeledReason::timeout : UnlabeledReason::transport;
      out.detail = httplib::to_string(res.error());
      log("attempt " + std::to_string(out.attempts) + " failed: " + out.detail);
      continue;
    }
    if (res->status < 200 || res->status >= 300) {
      out.reason = UnlabeledReason::bad_status;
      out.detail = "HTTP " + std::to_string(res->status);
      log("attempt " + std::to_string(out.attempts) + " failed: " + out.detail);
      continue;
    }

    const nlohmann::json reply = nlohmann::json::parse(res->body, nullptr, false);
    std::string content;
    if (!reply.is_discarded() && reply.contains("choices") && reply["choices"].is_array() &&
        !reply["choices"].empty()) {
      const auto& choice = reply["choices"][0];
      if (choice.contains("message") && choice["message"].contains("content") &&
          choice["message"]["content"].is_string())
        content = choice["message"]["content"].get<std::string>();
    }
    out.labels = parse_judge_reply(content);
    if (!out.labels) {
      out.reason = UnlabeledReason::unparseable;
      out.detail = "unparseable reply";
      log("attempt " + std::to_string(out.attempts) + " unparseable reply: " + content);
      return out;
    }
    out.reason.reset();
    out.detail = content;
    log("attempt " + std::to_string(out.attempts) + " labeled: " + content);
    return out;
  }
  log("giving up after " + std::to_string(out.attempts) + " attempts (" +
      std::string(to_string(*out.reason)) + ")");
  return out;
}

// Classifies every text with at most max_concurrent requests in flight.
// outcomes[i] always belongs to texts[i].
inline std::vector<JudgeOutcome> judge_classify_all(const JudgeConfig& cfg,
                                                    std::span<const std::string> texts,
                                                    const JudgeLog& log = stderr_judge_log()) {
  cfg.validate();
  std::vector<JudgeOutcome> outcomes(texts.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < texts.size(); i = next++)
      outcomes[i] = judge_classify(cfg, texts[i], log);
  };
  const std::size_t n_workers =
      std::min<std::size_t>(static_cast<std::size_t>(cfg.max_concurrent), texts.size());
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  return outcomes;
}

}  // namespace zerorl
