#pragma once

// Reasoning-behavior labels: keyword matching and ratio aggregation. The
// LLM-judge route lives in judge.hpp.

#include <algorithm>
#include <array>
#include <cctype>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "zerorl/errors.hpp"

namespace zerorl {

enum class BehaviorLabel { Backtracking, Verification, SubgoalSetting, Enumeration };

inline constexpr std::array<BehaviorLabel, 4> kAllBehaviors{
    BehaviorLabel::Backtracking, BehaviorLabel::Verification, BehaviorLabel::SubgoalSetting,
    BehaviorLabel::Enumeration};

inline std::string_view to_string(BehaviorLabel l) {
  switch (l) {
    case BehaviorLabel::Backtracking: return "Backtracking";
    case BehaviorLabel::Verification: return "Verification";
    case BehaviorLabel::SubgoalSetting: return "SubgoalSetting";
    case BehaviorLabel::Enumeration: return "Enumeration";
  }
  return "?";
}

using LabelSet = std::set<BehaviorLabel>;

struct KeywordRule {
  std::string_view keyword;
  BehaviorLabel label;
};

// Lower-case keywords; matching is case-insensitive substring search.
inline constexpr std::array<KeywordRule, 18> kKeywordRules{{
    {"wait", BehaviorLabel::Backtracking},
    {"try again", BehaviorLabel::Backtracking},
    {"alternatively", BehaviorLabel::Backtracking},
    {"retry", BehaviorLabel::Backtracking},
    {"rethink", BehaviorLabel::Backtracking},
    {"however", BehaviorLabel::Backtracking},
    {"recheck", BehaviorLabel::Verification},
    {"check", BehaviorLabel::Verification},
    {"verify", BehaviorLabel::Verification},
    {"confirm", BehaviorLabel::Verification},
    {"first,", BehaviorLabel::SubgoalSetting},
    {"step 1", BehaviorLabel::SubgoalSetting},
    {"let's break", BehaviorLabel::SubgoalSetting},
    {"next,", BehaviorLabel::SubgoalSetting},
    {"case 1", BehaviorLabel::Enumeration},
    {"case 2", BehaviorLabel::Enumeration},
    {"possibility", BehaviorLabel::Enumeration},
    {"either", BehaviorLabel::Enumeration},
}};

inline LabelSet classify_keywords(std::string_view text) {
  std::string lower(text);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  LabelSet out;
  for (const auto& rule : kKeywordRules)
    if (lower.find(rule.keyword) != std::string::npos) out.insert(rule.label);
  return out;
}

// nullopt marks a response the classifier could not label.
using MaybeLabels = std::optional<LabelSet>;

struct BehaviorRatios {
  std::map<std::string, double> ratio;  // empty when nothing was labeled
  double coverage = 0.0;
};

inline BehaviorRatios behavior_ratio(std::span<const MaybeLabels> labelsets) {
  if (labelsets.empty()) throw InputError("behavior_ratio: empty input");
  BehaviorRatios out;
  std::size_t labeled = 0;
  std::map<BehaviorLabel, std::size_t> counts;
  for (const auto& ls : labelsets) {
    if (!ls) continue;
    ++labeled;
    for (BehaviorLabel l : *ls) ++counts[l];
  }
  out.coverage = static_cast<double>(labeled) / static_cast<double>(labelsets.size());
  if (labeled == 0) return out;
  for (BehaviorLabel l : kAllBehaviors)
    out.ratio[std::string(to_string(l))] =
        static_cast<double>(counts[l]) / static_cast<double>(labeled);
  return out;
}

}  // namespace zerorl
