#pragma once

// Synthetic arithmetic tasks in three difficulty tiers, prompt rendering,
// and ingestion of line-delimited problem files.

#include <array>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "zerorl/errors.hpp"
#include "zerorl/rng.hpp"
#include "zerorl/verify.hpp"
#include "zerorl/vocab.hpp"

namespace zerorl {

enum class Tier { easy, medium, hard };
enum class PromptStyle { simple, box };

inline std::string_view to_string(Tier t) {
  switch (t) {
    case Tier::easy: return "easy";
    case Tier::medium: return "medium";
    case Tier::hard: return "hard";
  }
  return "?";
}

inline std::optional<Tier> parse_tier(std::string_view s) {
  if (s == "easy") return Tier::easy;
  if (s == "medium") return Tier::medium;
  if (s == "hard") return Tier::hard;
  return std::nullopt;
}

inline std::string_view to_string(PromptStyle s) { return s == PromptStyle::simple ? "simple" : "box"; }

inline std::optional<PromptStyle> parse_prompt_style(std::string_view s) {
  if (s == "simple") return PromptStyle::simple;
  if (s == "box") return PromptStyle::box;
  return std::nullopt;
}

struct Task {
  std::string prompt_text;  // e.g. "7+5="
  std::string gold_answer;  // canonical integer string
  Tier tier = Tier::easy;
  std::uint64_t id = 0;
  friend bool operator==(const Task&, const Task&) = default;
};

// FNV-1a over tier and prompt.
inline std::uint64_t task_id(Tier tier, std::string_view prompt) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&](unsigned char c) {
    h ^= c;
    h *= 0x100000001b3ULL;
  };
  mix(static_cast<unsigned char>(tier));
  for (char c : prompt) mix(static_cast<unsigned char>(c));
  return h;
}

inline Task make_task(std::string prompt, std::string gold, Tier tier) {
  const std::uint64_t id = task_id(tier, prompt);
  return Task{std::move(prompt), std::move(gold), tier, id};
}

namespace detail {

inline std::int64_t apply_op(char op, std::int64_t a, std::int64_t b) {
  switch (op) {
    case '+': return a + b;
    case '-': return a - b;
    default: return a * b;
  }
}

inline std::int64_t mod_positive(std::int64_t v, std::int64_t m) { return ((v % m) + m) % m; }

}  // namespace detail

// easy:   a+b, single digits, answer (a+b) mod 10
// medium: a+b, operands 0..99, answer (a+b) mod 100
// hard:   three operands 0..99 over {+,-,*} with one parenthesized pair and
//         at least one of {-,*}; answer is the value reduced into 0..99
inline Task gen_task(Tier tier, Rng& rng) {
  switch (tier) {
    case Tier::easy: {
      const auto a = static_cast<std::int64_t>(rng.below(10));
      const auto b = static_cast<std::int64_t>(rng.below(10));
      return make_task(std::to_string(a) + "+" + std::to_string(b) + "=",
                       std::to_string((a + b) % 10), tier);
    }
    case Tier::medium: {
      const auto a = static_cast<std::int64_t>(rng.below(100));
      const auto b = static_cast<std::int64_t>(rng.below(100));
      return make_task(std::to_string(a) + "+" + std::to_string(b) + "=",
                       std::to_string((a + b) % 100), tier);
    }
    case Tier::hard: {
      static constexpr std::array<char, 3> kOps{'+', '-', '*'};
      std::array<std::int64_t, 3> x{};
      for (auto& v : x) v = static_cast<std::int64_t>(rng.below(100));
      char op1, op2;
      do {
        op1 = kOps[rng.below(3)];
        op2 = kOps[rng.below(3)];
      } while (op1 == '+' && op2 == '+');
      const bool left_group = rng.below(2) == 0;
      const auto s = [](std::int64_t v) { return std::to_string(v); };
      std::string expr;
      std::int64_t value;
      if (left_group) {
        expr = "(" + s(x[0]) + op1 + s(x[1]) + ")" + op2 + s(x[2]);
        value = detail::apply_op(op2, detail::apply_op(op1, x[0], x[1]), x[2]);
      } else {
        expr = s(x[0]) + op1 + "(" + s(x[1]) + op2 + s(x[2]) + ")";
        value = detail::apply_op(op1, x[0], detail::apply_op(op2, x[1], x[2]));
      }
      return make_task(expr + "=", std::to_string(detail::mod_positive(value, 100)), tier);
    }
  }
  throw InputError("unknown tier");
}

// BOS, the prompt text (with a trailing "=" added if absent), and for the
// box style a trailing ANS_OPEN that the policy is expected to close.
inline std::vector<TokenId> render_prompt(const Task& task, PromptStyle style,
                                          const Vocabulary& vocab) {
  std::string text = task.prompt_text;
  if (text.empty() || text.back() != '=') text += '=';
  std::vector<TokenId> out{vocab.bos()};
  const std::vector<TokenId> body = vocab.encode(text);
  out.insert(out.end(), body.begin(), body.end());
  if (style == PromptStyle::box) out.push_back(vocab.ans_open());
  return out;
}

struct Dataset {
  std::vector<Task> easy, medium, hard;
  std::size_t skipped = 0;

  const std::vector<Task>& bucket(Tier t) const {
    switch (t) {
      case Tier::easy: return easy;
      case Tier::medium: return medium;
      case Tier::hard: return hard;
    }
    return medium;
  }
  std::size_t size() const { return easy.size() + medium.size() + hard.size(); }
};

inline std::optional<Tier> tier_for_level(std::optional<int> level) {
  if (!level) return Tier::medium;
  if (*level == 1) return Tier::easy;
  if (*level >= 2 && *level <= 4) return Tier::medium;
  if (*level == 5) return Tier::hard;
  return std::nullopt;
}

// One JSON object per line with "problem", "answer" and optional integer
// "level" (1..5). Malformed lines are skipped and counted.
inline Dataset ingest_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read dataset '" + path + "'");
  Dataset ds;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const nlohmann::json rec = nlohmann::json::parse(line, nullptr, false);
    if (rec.is_discarded() || !rec.is_object() || !rec.contains("problem") ||
        !rec.contains("answer") || !rec["problem"].is_string() || !rec["answer"].is_string()) {
      ++ds.skipped;
      continue;
    }
    std::optional<int> level;
    if (rec.contains("level")) {
      if (!rec["level"].is_number_integer()) {
        ++ds.skipped;
        continue;
      }
      level = rec["level"].get<int>();
    }
    const auto tier = tier_for_level(level);
    if (!tier) {
      ++ds.skipped;
      continue;
    }
    Task t = make_task(rec["problem"].get<std::string>(),
                       normalize_answer(rec["answer"].get<std::string>()), *tier);
    switch (*tier) {
      case Tier::easy: ds.easy.push_back(std::move(t)); break;
      case Tier::medium: ds.medium.push_back(std::move(t)); break;
      case Tier::hard: ds.hard.push_back(std::move(t)); break;
    }
  }
  if (ds.size() == 0) throw InputError("dataset '" + path + "' has no valid records");
  return ds;
}

}  // namespace zerorl
