#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "zerorl/metrics.hpp"
#include "zerorl/rng.hpp"

using namespace zerorl;

namespace {

Rollout rollout(std::size_t len, bool stopped) {
  Rollout r;
  r.prompt = {0};
  r.response.assign(len, 5);
  if (stopped) r.response.back() = 1;
  r.stopped = stopped;
  return r;
}

// Fraction of the C(n, k) k-subsets of the flags containing a true flag.
double enumerate_pass(const std::vector<bool>& flags, std::size_t k) {
  const std::size_t n = flags.size();
  std::size_t hit = 0, total = 0;
  for (unsigned mask = 0; mask < (1u << n); ++mask) {
    if (static_cast<std::size_t>(__builtin_popcount(mask)) != k) continue;
    ++total;
    bool any = false;
    for (std::size_t i = 0; i < n; ++i)
      if ((mask >> i & 1u) && flags[i]) any = true;
    hit += any;
  }
  return static_cast<double>(hit) / static_cast<double>(total);
}

MetricsRecord sample_record() {
  MetricsRecord r;
  r.iter = 25;
  r.split = Split::eval;
  r.accuracy = 0.1 + 0.2;  // not exactly representable in short decimal
  r.mean_resp_len = 94.0 / 3.0;
  r.truncation_ratio = 1.0 / 3.0;
  r.avg_stopped_len = 15.0;
  r.pass_at = {{1, 0.3}, {2, 0.45}, {8, 0.7}};
  r.avg_at_k = 0.3;
  r.behavior_ratio = {{"Backtracking", 0.0}, {"Verification", 2.0 / 3.0}};
  r.mean_reward = 0.3;
  r.kl_mean = 1.25e-7;
  r.clip_active_frac = 0.015625;
  return r;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("zerorl_test_" + name)).string();
}

}  // namespace

TEST(BatchStats, HandFixture) {
  const std::vector<Rollout> rs{rollout(10, true), rollout(20, true), rollout(64, false)};
  const auto s = batch_stats(rs);
  EXPECT_EQ(s.truncation_ratio, 1.0 / 3.0);
  EXPECT_EQ(s.avg_stopped_len, 15.0);
  EXPECT_EQ(s.mean_resp_len, 94.0 / 3.0);
  EXPECT_FALSE(s.no_stopped);
}

TEST(BatchStats, DegenerateCases) {
  const std::vector<Rollout> stopped{rollout(2, true), rollout(3, true)};
  EXPECT_EQ(batch_stats(stopped).truncation_ratio, 0.0);
  EXPECT_EQ(batch_stats(stopped).avg_stopped_len, 2.5);
  const std::vector<Rollout> cut{rollout(4, false), rollout(4, false)};
  const auto s = batch_stats(cut);
  EXPECT_EQ(s.truncation_ratio, 1.0);
  EXPECT_EQ(s.avg_stopped_len, 0.0);
  EXPECT_TRUE(s.no_stopped);
  EXPECT_THROW(batch_stats(std::vector<Rollout>{}), InputError);
}

TEST(PassAtK, HandValues) {
  EXPECT_EQ(pass_at_k({{true, false, false, false, false, false, false, false}}, 8,
                      PassEstimator::empirical),
            1.0);
  const CorrectFlags none(5, std::vector<bool>(8, false));
  for (std::size_t k : {1, 4, 8}) EXPECT_EQ(pass_at_k(none, k, PassEstimator::unbiased), 0.0);
  EXPECT_EQ(pass_at_k(none, 8, PassEstimator::empirical), 0.0);
  EXPECT_NEAR(pass_at_k({{true, true, false, false}}, 2, PassEstimator::unbiased), 5.0 / 6.0,
              1e-15);
}

TEST(PassAtK, UnbiasedEqualsSubsetEnumeration) {
  for (std::size_t n = 1; n <= 6; ++n)
    for (std::size_t c = 0; c <= n; ++c) {
      std::vector<bool> flags(n, false);
      for (std::size_t i = 0; i < c; ++i) flags[i] = true;
      for (std::size_t k = 1; k <= n; ++k)
        EXPECT_NEAR(pass_at_k({flags}, k, PassEstimator::unbiased), enumerate_pass(flags, k),
                    1e-15)
            << "n=" << n << " c=" << c << " k=" << k;
    }
}

TEST(PassAtK, Errors) {
  EXPECT_THROW(pass_at_k({{true, false}}, 3, PassEstimator::unbiased), InputError);
  EXPECT_THROW(pass_at_k({{true, false}}, 1, PassEstimator::empirical), InputError);
}

TEST(PassAtK, MonotoneInK) {
  Rng rng(3);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + rng.below(16), q = 1 + rng.below(10);
    CorrectFlags flags(q, std::vector<bool>(n));
    for (auto& row : flags)
      for (std::size_t i = 0; i < n; ++i) row[i] = rng.uniform() < 0.3;
    double prev = -1.0;
    for (std::size_t k = 1; k <= n; ++k) {
      const double v = pass_at_k(flags, k, PassEstimator::unbiased);
      EXPECT_GE(v, prev - 1e-15);
      prev = v;
    }
    EXPECT_NEAR(prev, pass_at_k(flags, n, PassEstimator::empirical), 1e-15);
  }
}

TEST(PassAtK, DominatesSingleSampleAccuracy) {
  Rng rng(4);
  CorrectFlags flags(2000, std::vector<bool>(8));
  std::size_t single = 0;
  for (auto& row : flags) {
    const double p = rng.uniform();
    for (std::size_t i = 0; i < 8; ++i) row[i] = rng.uniform() < p;
    single += rng.uniform() < p;
  }
  const double acc = static_cast<double>(single) / 2000.0;
  for (std::size_t k : {1, 2, 4, 8})
    EXPECT_GE(pass_at_k(flags, k, PassEstimator::unbiased), acc - 0.05);
}

TEST(AvgAtK, HandValues) {
  EXPECT_EQ(avg_at_k({{true, false, true, false}}), 0.5);
  EXPECT_EQ(avg_at_k({{true, true}, {true, true}}), 1.0);
  const CorrectFlags one{{true}, {false}, {true}, {true}};
  EXPECT_EQ(avg_at_k(one), pass_at_k(one, 1, PassEstimator::empirical));
  EXPECT_THROW(avg_at_k({{true}, {true, false}}), InputError);
}

TEST(Record, JsonKeyOrderMatchesSchema) {
  const auto j = to_json(sample_record());
  std::vector<std::string> keys;
  for (const auto& [k, v] : j.items()) keys.push_back(k);
  EXPECT_EQ(keys, (std::vector<std::string>{"iter", "split", "accuracy", "mean_resp_len",
                                            "truncation_ratio", "avg_stopped_len", "pass_at",
                                            "avg_at_k", "behavior_ratio", "mean_reward", "kl_mean",
                                            "clip_active_frac", "schema_version"}));
  EXPECT_EQ(j["schema_version"], 1);
  EXPECT_TRUE(j["pass_at"].contains("8"));
}

TEST(Record, RoundTripExact) {
  const MetricsRecord r = sample_record();
  EXPECT_EQ(parse_record_line(to_line(r)), r);
}

TEST(Record, ValidationGate) {
  MetricsRecord r = sample_record();
  r.pass_at = {{1, 0.5}, {8, 0.4}};
  EXPECT_THROW(validate_record(r), InputError);
  r = sample_record();
  r.truncation_ratio = 1.0;
  EXPECT_THROW(validate_record(r), InputError);
  r.avg_stopped_len = 0.0;
  EXPECT_NO_THROW(validate_record(r));
  r.accuracy = 1.5;
  EXPECT_THROW(validate_record(r), InputError);
}

TEST(Record, SchemaErrors) {
  auto j = to_json(sample_record());
  j["schema_version"] = 2;
  EXPECT_THROW(parse_record_line(j.dump()), VersionError);
  j = to_json(sample_record());
  j["timestamp"] = 5;
  EXPECT_THROW(parse_record_line(j.dump()), InputError);
  j = to_json(sample_record());
  j.erase("kl_mean");
  EXPECT_THROW(parse_record_line(j.dump()), InputError);
  try {
    parse_record_line("{\"iter\": 3,");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_GT(e.offset, 0u);
  }
}

TEST(AppendRecord, TwoAppendsInOrder) {
  const std::string path = temp_path("log.jsonl");
  std::filesystem::remove(path);
  MetricsRecord a = sample_record(), b = sample_record();
  b.iter = 26;
  b.split = Split::train;
  append_record(path, a);
  append_record(path, b);
  const auto log = read_log(path);
  ASSERT_EQ(log.size(), 2u);
  EXPECT_EQ(log[0], a);
  EXPECT_EQ(log[1], b);

  MetricsRecord bad = sample_record();
  bad.pass_at = {{1, 0.9}, {2, 0.1}};
  EXPECT_THROW(append_record(path, bad), InputError);
  EXPECT_EQ(read_log(path).size(), 2u);
  std::filesystem::remove(path);
}

TEST(AppendRecord, UnwritablePath) {
  EXPECT_THROW(append_record("/nonexistent/dir/log.jsonl", sample_record()), IoError);
}
