#include <gtest/gtest.h>

#include <atomic>
#include <chrono>
#include <thread>

#include <httplib.h>

#include "zerorl/behavior.hpp"
#include "zerorl/judge.hpp"
#include "zerorl/rng.hpp"

using namespace zerorl;

namespace {

using B = BehaviorLabel;

LabelSet labels(std::initializer_list<B> l) { return LabelSet(l); }

}  // namespace

TEST(Keywords, FixtureTable) {
  const std::vector<std::pair<std::string, LabelSet>> table{
      {"Wait, let me try again", labels({B::Backtracking})},
      {"", labels({})},
      {"Let's check: 3+4=7. Case 1: ...", labels({B::Verification, B::Enumeration})},
      {"7+5=2", labels({})},
      {"RECHECK the sum", labels({B::Verification})},
      {"Alternatively we could add", labels({B::Backtracking})},
      {"I should retry", labels({B::Backtracking})},
      {"rethink this", labels({B::Backtracking})},
      {"however the carry", labels({B::Backtracking})},
      {"verify the digits", labels({B::Verification})},
      {"to confirm", labels({B::Verification})},
      {"First, add the ones", labels({B::SubgoalSetting})},
      {"first add the ones", labels({})},
      {"Step 1 is easy", labels({B::SubgoalSetting})},
      {"Let's break it down", labels({B::SubgoalSetting})},
      {"next, carry", labels({B::SubgoalSetting})},
      {"case 2 fails", labels({B::Enumeration})},
      {"one possibility", labels({B::Enumeration})},
      {"either 3 or 4", labels({B::Enumeration})},
      {"Wait. First, verify case 1", labels({B::Backtracking, B::SubgoalSetting,
                                              B::Verification, B::Enumeration})},
  };
  ASSERT_EQ(table.size(), 20u);
  for (const auto& [text, expect] : table) {
    EXPECT_EQ(classify_keywords(text), expect) << text;
    EXPECT_EQ(classify_keywords(text), classify_keywords(text));
  }
}

TEST(Keywords, MonotoneUnderConcatenation) {
  const std::vector<std::string> words{"wait", "check", "case 1", "first,", "7", " ", "x",
                                       "either", "retry", "next,"};
  Rng rng(5);
  for (int trial = 0; trial < 2000; ++trial) {
    std::string a, b;
    for (std::size_t i = rng.below(4); i > 0; --i) a += words[rng.below(words.size())];
    for (std::size_t i = rng.below(4); i > 0; --i) b += words[rng.below(words.size())];
    const LabelSet la = classify_keywords(a), lab = classify_keywords(a + b);
    for (B l : la) EXPECT_TRUE(lab.count(l));
  }
}

TEST(Ratio, Counting) {
  std::vector<MaybeLabels> xs{labels({B::Verification}), labels({B::Verification, B::Backtracking}),
                              labels({})};
  auto r = behavior_ratio(xs);
  EXPECT_EQ(r.ratio.at("Verification"), 2.0 / 3.0);
  EXPECT_EQ(r.ratio.at("Backtracking"), 1.0 / 3.0);
  EXPECT_EQ(r.ratio.at("Enumeration"), 0.0);
  EXPECT_EQ(r.coverage, 1.0);

  xs = {labels({B::Verification}), std::nullopt};
  r = behavior_ratio(xs);
  EXPECT_EQ(r.ratio.at("Verification"), 1.0);
  EXPECT_EQ(r.coverage, 0.5);

  xs = {std::nullopt, std::nullopt};
  r = behavior_ratio(xs);
  EXPECT_TRUE(r.ratio.empty());
  EXPECT_EQ(r.coverage, 0.0);
  EXPECT_THROW(behavior_ratio(std::vector<MaybeLabels>{}), InputError);
}

TEST(Ratio, FuzzedBounds) {
  Rng rng(6);
  bool sum_exceeds_one = false;
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<MaybeLabels> xs;
    for (std::size_t i = 1 + rng.below(10); i > 0; --i) {
      if (rng.below(5) == 0) {
        xs.emplace_back(std::nullopt);
        continue;
      }
      LabelSet s;
      for (B l : kAllBehaviors)
        if (rng.below(2)) s.insert(l);
      xs.emplace_back(s);
    }
    const auto r = behavior_ratio(xs);
    double sum = 0.0;
    for (const auto& [k, v] : r.ratio) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
      sum += v;
    }
    sum_exceeds_one |= sum > 1.0;
  }
  EXPECT_TRUE(sum_exceeds_one);
}

TEST(JudgeReply, Parsing) {
  EXPECT_EQ(parse_judge_reply("[Verification, Enumeration]"),
            MaybeLabels(labels({B::Verification, B::Enumeration})));
  EXPECT_EQ(parse_judge_reply("none"), MaybeLabels(labels({})));
  EXPECT_EQ(parse_judge_reply("[]"), MaybeLabels(labels({})));
  EXPECT_EQ(parse_judge_reply("subgoal setting and BACKTRACKING"),
            MaybeLabels(labels({B::SubgoalSetting, B::Backtracking})));
  EXPECT_FALSE(parse_judge_reply("I cannot tell").has_value());
  EXPECT_FALSE(parse_judge_reply("").has_value());
}

TEST(JudgeRequest, EmbedsDefinitionsAndZeroTemperature) {
  JudgeConfig cfg;
  cfg.model_name = "judge-model";
  const auto req = build_judge_request(cfg, "Wait, 7");
  EXPECT_EQ(req["temperature"], 0);
  EXPECT_EQ(req["model"], "judge-model");
  const std::string system = req["messages"][0]["content"];
  for (const char* name : {"Backtracking", "Verification", "Subgoal Setting", "Enumeration"})
    EXPECT_NE(system.find(name), std::string::npos);
  EXPECT_NE(req["messages"][1]["content"].get<std::string>().find("Wait, 7"), std::string::npos);
}

TEST(JudgeConfigCheck, MissingKeyFailsBeforeNetwork) {
  JudgeConfig cfg;
  cfg.base_url = "http://127.0.0.1:1";
  try {
    judge_classify(cfg, "x", [](const std::string&) { FAIL() << "no call expected"; });
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key, "api_key");
  }
}

namespace {

// Stub OpenAI-compatible endpoint whose behavior is switched per test.
class StubJudge {
 public:
  enum class Mode { ok, slow, bad_status, garbage, flaky };

  explicit StubJudge(Mode mode) : mode_(mode) {
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req,
                                                httplib::Response& res) {
      const int n = ++calls_;
      last_auth_ = req.get_header_value("Authorization");
      switch (mode_) {
        case Mode::slow:
          std::this_thread::sleep_for(std::chrono::milliseconds(600));
          reply(res, "[Verification]");
          return;
        case Mode::bad_status:
          res.status = 503;
          res.set_content("overloaded", "text/plain");
          return;
        case Mode::garbage:
          reply(res, "I am not sure what you mean");
          return;
        case Mode::flaky:
          if (n == 1) {
            res.status = 500;
            return;
          }
          reply(res, "[Backtracking, Enumeration]");
          return;
        case Mode::ok: {
          const auto body = nlohmann::json::parse(req.body);
          const std::string text = body["messages"][1]["content"];
          reply(res, text.find("check") != std::string::npos ? "[Verification]" : "none");
          return;
        }
      }
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~StubJudge() {
    server_.stop();
    thread_.join();
  }

  JudgeConfig config() const {
    JudgeConfig c;
    c.base_url = "http://127.0.0.1:" + std::to_string(port_) + "/v1";
    c.api_key = "test-key";
    c.timeout_seconds = 0.2;
    c.retries = 2;
    c.backoff_ms = 1;
    return c;
  }
  int calls() const { return calls_; }
  std::string last_auth() const { return last_auth_; }

 private:
  static void reply(httplib::Response& res, const std::string& content) {
    const nlohmann::json body{
        {"choices", {{{"message", {{"role", "assistant"}, {"content", content}}}}}}};
    res.set_content(body.dump(), "application/json");
  }

  Mode mode_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  std::atomic<int> calls_{0};
  std::string last_auth_;
};

JudgeLog quiet_log(std::vector<std::string>* lines) {
  return [lines](const std::string& s) { lines->push_back(s); };
}

}  // namespace

TEST(JudgeClient, LabelsThroughStub) {
  StubJudge stub(StubJudge::Mode::ok);
  std::vector<std::string> lines;
  const auto out = judge_classify(stub.config(), "let me check", quiet_log(&lines));
  EXPECT_EQ(out.labels, MaybeLabels(labels({B::Verification})));
  EXPECT_FALSE(out.reason.has_value());
  EXPECT_EQ(out.attempts, 1);
  EXPECT_EQ(stub.last_auth(), "Bearer test-key");
  EXPECT_FALSE(lines.empty());
}

TEST(JudgeClient, TimeoutBecomesUnlabeled) {
  StubJudge stub(StubJudge::Mode::slow);
  std::vector<std::string> lines;
  const auto out = judge_classify(stub.config(), "x", quiet_log(&lines));
  EXPECT_FALSE(out.labels.has_value());
  ASSERT_TRUE(out.reason.has_value());
  EXPECT_EQ(*out.reason, UnlabeledReason::timeout);
  EXPECT_EQ(out.attempts, 3);
}

TEST(JudgeClient, BadStatusBecomesUnlabeled) {
  StubJudge stub(StubJudge::Mode::bad_status);
  std::vector<std::string> lines;
  const auto out = judge_classify(stub.config(), "x", quiet_log(&lines));
  EXPECT_FALSE(out.labels.has_value());
  EXPECT_EQ(out.reason, UnlabeledReason::bad_status);
  EXPECT_EQ(stub.calls(), 3);
}

TEST(JudgeClient, UnparseableBecomesUnlabeled) {
  StubJudge stub(StubJudge::Mode::garbage);
  std::vector<std::string> lines;
  const auto out = judge_classify(stub.config(), "x", quiet_log(&lines));
  EXPECT_FALSE(out.labels.has_value());
  EXPECT_EQ(out.reason, UnlabeledReason::unparseable);
  EXPECT_EQ(stub.calls(), 1);
}

TEST(JudgeClient, RetryRecoversFromTransientFailure) {
  StubJudge stub(StubJudge::Mode::flaky);
  std::vector<std::string> lines;
  const auto out = judge_classify(stub.config(), "x", quiet_log(&lines));
  EXPECT_EQ(out.labels, MaybeLabels(labels({B::Backtracking, B::Enumeration})));
  EXPECT_EQ(out.attempts, 2);
}

TEST(JudgeClient, UnreachableEndpointIsTransport) {
  JudgeConfig cfg;
  cfg.base_url = "http://127.0.0.1:1";
  cfg.api_key = "k";
  cfg.timeout_seconds = 0.2;
  cfg.retries = 0;
  std::vector<std::string> lines;
  const auto out = judge_classify(cfg, "x", quiet_log(&lines));
  EXPECT_FALSE(out.labels.has_value());
  EXPECT_EQ(out.reason, UnlabeledReason::transport);
}

TEST(JudgeClient, BatchKeepsInputOrder) {
  StubJudge stub(StubJudge::Mode::ok);
  std::vector<std::string> texts;
  for (int i = 0; i < 12; ++i) texts.push_back(i % 3 == 0 ? "check " + std::to_string(i) : "x");
  std::vector<std::string> lines;
  JudgeConfig cfg = stub.config();
  cfg.max_concurrent = 4;
  const auto outs = judge_classify_all(cfg, texts, [&](const std::string&) {});
  ASSERT_EQ(outs.size(), texts.size());
  for (std::size_t i = 0; i < texts.size(); ++i)
    EXPECT_EQ(outs[i].labels,
              MaybeLabels(i % 3 == 0 ? labels({B::Verification}) : labels({})));
}
