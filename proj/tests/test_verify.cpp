#include <gtest/gtest.h>

#include "zerorl/rng.hpp"
#include "zerorl/verify.hpp"

using namespace zerorl;

namespace {

bool signed_digits(const std::string& s) {
  std::size_t i = s.size() && s[0] == '-' ? 1 : 0;
  if (i == s.size()) return false;
  for (; i < s.size(); ++i)
    if (s[i] < '0' || s[i] > '9') return false;
  return true;
}

// Every (open, close) marker position pair, left to right; the well-formed
// pair with the rightmost close wins.
std::optional<std::string> scan_pairs(const std::string& text) {
  const std::string open = "<ans>", close = "</ans>";
  std::optional<std::string> best;
  std::size_t best_close = 0;
  for (std::size_t o = text.find(open); o != std::string::npos; o = text.find(open, o + 1))
    for (std::size_t c = text.find(close, o + open.size()); c != std::string::npos;
         c = text.find(close, c + 1)) {
      const std::string inner = text.substr(o + open.size(), c - o - open.size());
      if (signed_digits(inner) && (!best || c >= best_close)) {
        best = inner;
        best_close = c;
      }
    }
  return best;
}

struct Golden {
  const char* text;
  ExtractMode mode;
  bool found;
  const char* answer;
};

}  // namespace

TEST(Extract, GoldenSuite) {
  const std::vector<Golden> cases{
      {"7+5=<ans>12</ans>", ExtractMode::any, true, "12"},
      {"x <ans>3</ans> y <ans>12</ans>", ExtractMode::any, true, "12"},
      {"the result is 12", ExtractMode::boxed_only, false, ""},
      {"the result is 12", ExtractMode::any, true, "12"},
      {"<ans>-4</ans>", ExtractMode::boxed_only, true, "-4"},
      {"<ans></ans> 5", ExtractMode::any, true, "5"},
      {"<ans></ans>", ExtractMode::boxed_only, false, ""},
      {"<ans>1 2</ans>", ExtractMode::boxed_only, false, ""},
      {"<ans>12", ExtractMode::boxed_only, false, ""},
      {"<ans>12", ExtractMode::any, true, "12"},
      {"12</ans>", ExtractMode::boxed_only, false, ""},
      {"<ans>3</ans> then 9", ExtractMode::any, true, "3"},
      {"<ans><ans>7</ans></ans>", ExtractMode::boxed_only, true, "7"},
      {"<ans>1</ans>2</ans>", ExtractMode::boxed_only, true, "1"},
      {"a-b 3-4", ExtractMode::any, true, "-4"},
      {"no digits", ExtractMode::any, false, ""},
      {"", ExtractMode::any, false, ""},
      {"007", ExtractMode::any, true, "007"},
      {"1+2=3.", ExtractMode::any, true, "3"},
      {"<ans>-</ans>", ExtractMode::boxed_only, false, ""},
  };
  for (const auto& c : cases) {
    const auto e = extract_answer(c.text, c.mode);
    EXPECT_EQ(e.found, c.found) << c.text;
    EXPECT_EQ(e.answer, c.answer) << c.text;
    if (!e.found) {
      EXPECT_EQ(e.method, ExtractMethod::none);
    }
  }
  EXPECT_EQ(extract_answer("7+5=<ans>12</ans>", ExtractMode::any).method, ExtractMethod::boxed);
  EXPECT_EQ(extract_answer("is 12", ExtractMode::any).method, ExtractMethod::last_number);
}

TEST(Extract, AgreesWithPairScanner) {
  const std::vector<std::string> pieces{"<ans>", "</ans>", "1", "23", "-", "x", " ", "0", "<", ">"};
  Rng rng(11);
  for (int trial = 0; trial < 20000; ++trial) {
    std::string text;
    const std::size_t n = rng.below(9);
    for (std::size_t i = 0; i < n; ++i) text += pieces[rng.below(pieces.size())];
    const auto got = last_boxed(text);
    EXPECT_EQ(got, scan_pairs(text)) << text;
  }
}

TEST(AnswersEqual, Normalization) {
  EXPECT_TRUE(answers_equal("012", "12"));
  EXPECT_TRUE(answers_equal("-0", "0"));
  EXPECT_FALSE(answers_equal("12", "13"));
  EXPECT_TRUE(answers_equal(" 12. ", "12"));
  EXPECT_TRUE(answers_equal("-007", "-7"));
  EXPECT_TRUE(answers_equal("000", "0"));
  EXPECT_FALSE(answers_equal("12..", "12"));
  EXPECT_FALSE(answers_equal("-5", "5"));
  EXPECT_EQ(normalize_answer("x "), "x");
}

TEST(AnswersEqual, EquivalenceRelation) {
  const std::vector<std::string> pool{"0", "-0", "00", "0.", " 0", "7", "07", "7.", "-7", "-07",
                                      "12", "012", "x", " x"};
  for (const auto& a : pool) {
    EXPECT_TRUE(answers_equal(a, a));
    for (const auto& b : pool) {
      EXPECT_EQ(answers_equal(a, b), answers_equal(b, a));
      for (const auto& c : pool)
        if (answers_equal(a, b) && answers_equal(b, c)) {
          EXPECT_TRUE(answers_equal(a, c));
        }
    }
  }
}

TEST(Reward, GoldenValues) {
  struct Case {
    const char* text;
    const char* gold;
    RewardMode mode;
    double reward;
  };
  const std::vector<Case> cases{
      {"steps... <ans>2</ans>", "2", RewardMode::format_strict, 1.0},
      {"the answer is 2", "2", RewardMode::format_strict, -1.0},
      {"the answer is 2", "2", RewardMode::correctness, 1.0},
      {"<ans>3</ans>", "2", RewardMode::format_strict, 0.0},
      {"<ans>3</ans>", "2", RewardMode::correctness, 0.0},
      {"nothing", "2", RewardMode::correctness, 0.0},
      {"<ans>02</ans>", "2", RewardMode::correctness, 1.0},
      {"<ans>2</ans> 5", "2", RewardMode::correctness, 1.0},
      {"<ans>2", "2", RewardMode::format_strict, -1.0},
      {"-)0*", "0", RewardMode::correctness, 1.0},
  };
  for (const auto& c : cases) EXPECT_EQ(compute_reward(c.text, c.gold, c.mode), c.reward) << c.text;
}

TEST(Reward, RangeAndModeDominance) {
  const std::vector<std::string> pieces{"<ans>", "</ans>", "1", "2", "-", "a", " "};
  Rng rng(12);
  for (int trial = 0; trial < 20000; ++trial) {
    std::string text;
    const std::size_t n = rng.below(8);
    for (std::size_t i = 0; i < n; ++i) text += pieces[rng.below(pieces.size())];
    const std::string gold = rng.below(2) ? "2" : "12";
    const double rc = compute_reward(text, gold, RewardMode::correctness);
    const double rf = compute_reward(text, gold, RewardMode::format_strict);
    EXPECT_TRUE(rc == 0.0 || rc == 1.0);
    EXPECT_TRUE(rf == -1.0 || rf == 0.0 || rf == 1.0);
    const auto any = extract_answer(text, ExtractMode::any);
    EXPECT_EQ(rc, any.found && answers_equal(any.answer, gold) ? 1.0 : 0.0) << text;
    EXPECT_GE(rc, rf);
  }
}

TEST(RewardMode, Names) {
  EXPECT_EQ(parse_reward_mode("correctness"), RewardMode::correctness);
  EXPECT_EQ(parse_reward_mode("format_strict"), RewardMode::format_strict);
  EXPECT_FALSE(parse_reward_mode("strict").has_value());
}
