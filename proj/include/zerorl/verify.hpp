#pragma once

// Rule-based answer extraction and the two reward functions.

#include <cctype>
#include <optional>
#include <string>
#include <string_view>

#include "zerorl/vocab.hpp"

namespace zerorl {

enum class RewardMode { correctness, format_strict };
enum class ExtractMode { boxed_only, any };
enum class ExtractMethod { none, boxed, last_number };

struct Extraction {
  bool found = false;
  std::string answer;
  ExtractMethod method = ExtractMethod::none;
  friend bool operator==(const Extraction&, const Extraction&) = default;
};

inline std::string_view to_string(RewardMode m) {
  return m == RewardMode::correctness ? "correctness" : "format_strict";
}

inline std::optional<RewardMode> parse_reward_mode(std::string_view s) {
  if (s == "correctness") return RewardMode::correctness;
  if (s == "format_strict") return RewardMode::format_strict;
  return std::nullopt;
}

namespace detail {

inline bool is_digit(char c) { return c >= '0' && c <= '9'; }

// "-?[0-9]+"
inline bool is_signed_digits(std::string_view s) {
  if (!s.empty() && s.front() == '-') s.remove_prefix(1);
  if (s.empty()) return false;
  for (char c : s)
    if (!is_digit(c)) return false;
  return true;
}

}  // namespace detail

inline std::optional<std::string> last_boxed(std::string_view text) {
  // A well-formed pair has a digit-only interior, so it can contain no other
  // marker; scanning closes from the right finds the last one.
  std::size_t end = text.size();
  while (true) {
    const std::size_t close = text.rfind(kAnsClose, end);
    if (close == std::string_view::npos) return std::nullopt;
    const std::size_t open = text.rfind(kAnsOpen, close);
    if (open != std::string_view::npos) {
      const std::size_t begin = open + kAnsOpen.size();
      if (begin <= close) {
        std::string_view inner = text.substr(begin, close - begin);
        if (detail::is_signed_digits(inner)) return std::string(inner);
      }
    }
    if (close == 0) return std::nullopt;
    end = close - 1;
  }
}

// Last maximal run of digits, with a directly preceding '-' kept as sign.
inline std::optional<std::string> last_number(std::string_view text) {
  std::size_t i = text.size();
  while (i > 0 && !detail::is_digit(text[i - 1])) --i;
  if (i == 0) return std::nullopt;
  const std::size_t end = i;
  while (i > 0 && detail::is_digit(text[i - 1])) --i;
  if (i > 0 && text[i - 1] == '-') --i;
  return std::string(text.substr(i, end - i));
}

inline Extraction extract_answer(std::string_view text, ExtractMode mode) {
  if (auto boxed = last_boxed(text)) return {true, *boxed, ExtractMethod::boxed};
  if (mode == ExtractMode::any)
    if (auto num = last_number(text)) return {true, *num, ExtractMethod::last_number};
  return {};
}

// Trim whitespace, drop one trailing '.', drop leading zeros, fold -0 to 0.
inline std::string normalize_answer(std::string_view s) {
  auto space = [](char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; };
  while (!s.empty() && space(s.front())) s.remove_prefix(1);
  while (!s.empty() && space(s.back())) s.remove_suffix(1);
  if (!s.empty() && s.back() == '.') s.remove_suffix(1);
  if (!detail::is_signed_digits(s)) return std::string(s);
  const bool negative = s.front() == '-';
  if (negative) s.remove_prefix(1);
  while (s.size() > 1 && s.front() == '0') s.remove_prefix(1);
  if (s == "0") return "0";
  return negative ? "-" + std::string(s) : std::string(s);
}

inline bool answers_equal(std::string_view a, std::string_view b) {
  return normalize_answer(a) == normalize_answer(b);
}

inline double compute_reward(std::string_view response_text, std::string_view gold,
                             RewardMode mode) {
  if (mode == RewardMode::correctness) {
    const Extraction e = extract_answer(response_text, ExtractMode::any);
    return e.found && answers_equal(e.answer, gold) ? 1.0 : 0.0;
  }
  const Extraction e = extract_answer(response_text, ExtractMode::boxed_only);
  if (!e.found) return -1.0;
  return answers_equal(e.answer, gold) ? 1.0 : 0.0;
}

}  // namespace zerorl
