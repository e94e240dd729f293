#pragma once

// Monitoring reducers (truncation ratio, stopped length, pass@k, avg@k) and
// the line-delimited run log.

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "zerorl/errors.hpp"
#include "zerorl/policy.hpp"

namespace zerorl {

inline constexpr int kLogSchemaVersion = 1;

struct BatchStats {
  double truncation_ratio = 0.0;
  double avg_stopped_len = 0.0;
  double mean_resp_len = 0.0;
  bool no_stopped = false;  // every rollout truncated; avg_stopped_len is 0
};

inline BatchStats batch_stats(std::span<const Rollout> rollouts) {
  if (rollouts.empty()) throw InputError("batch_stats: empty rollout list");
  BatchStats s;
  std::size_t truncated = 0, stopped = 0;
  double stopped_len = 0.0, total_len = 0.0;
  for (const Rollout& r : rollouts) {
    const double len = static_cast<double>(r.response.size());
    total_len += len;
    if (r.stopped) {
      ++stopped;
      stopped_len += len;
    } else {
      ++truncated;
    }
  }
  const double n = static_cast<double>(rollouts.size());
  s.truncation_ratio = static_cast<double>(truncated) / n;
  s.mean_resp_len = total_len / n;
  s.no_stopped = stopped == 0;
  s.avg_stopped_len = stopped == 0 ? 0.0 : stopped_len / static_cast<double>(stopped);
  return s;
}

enum class PassEstimator { empirical, unbiased };

using CorrectFlags = std::vector<std::vector<bool>>;  // per question, per sample

// 1 - C(n-c, k) / C(n, k), evaluated as a running product.
inline double pass_at_k_unbiased_single(std::size_t n, std::size_t c, std::size_t k) {
  if (n < k) throw InputError("pass@k: fewer samples than k");
  if (n - c < k) return 1.0;
  double miss = 1.0;
  for (std::size_t i = n - c + 1; i <= n; ++i)
    miss *= 1.0 - static_cast<double>(k) / static_cast<double>(i);
  return 1.0 - miss;
}

inline double pass_at_k(const CorrectFlags& flags, std::size_t k, PassEstimator est) {
  if (flags.empty()) throw InputError("pass@k: no questions");
  if (k < 1) throw InputError("pass@k: k must be at least 1");
  double sum = 0.0;
  for (const auto& q : flags) {
    const std::size_t n = q.size();
    std::size_t c = 0;
    for (bool f : q) c += f ? 1 : 0;
    if (n < k) throw InputError("pass@k: question has fewer samples than k");
    if (est == PassEstimator::empirical) {
      if (n != k) throw InputError("pass@k: empirical estimator needs exactly k samples");
      sum += c > 0 ? 1.0 : 0.0;
    } else {
      sum += pass_at_k_unbiased_single(n, c, k);
    }
  }
  return sum / static_cast<double>(flags.size());
}

inline double avg_at_k(const CorrectFlags& flags) {
  if (flags.empty()) throw InputError("avg@k: no questions");
  const std::size_t k = flags.front().size();
  if (k < 1) throw InputError("avg@k: k must be at least 1");
  std::size_t correct = 0;
  for (const auto& q : flags) {
    if (q.size() != k) throw InputError("avg@k: ragged sample counts");
    for (bool f : q) correct += f ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(flags.size() * k);
}

enum class Split { train, eval };

// One row of the run log. `truncation_ratio` is the fraction of responses
// cut off by the length limit (logged under that name to keep it apart from
// the policy clip epsilon).
struct MetricsRecord {
  std::int64_t iter = 0;
  Split split = Split::eval;
  double accuracy = 0.0;
  double mean_resp_len = 0.0;
  double truncation_ratio = 0.0;
  double avg_stopped_len = 0.0;
  std::map<std::size_t, double> pass_at;
  double avg_at_k = 0.0;
  std::map<std::string, double> behavior_ratio;
  double mean_reward = 0.0;
  double kl_mean = 0.0;
  double clip_active_frac = 0.0;

  friend bool operator==(const MetricsRecord&, const MetricsRecord&) = default;
};

inline void validate_record(const MetricsRecord& r) {
  auto unit = [](double x) { return x >= 0.0 && x <= 1.0; };
  if (!unit(r.accuracy)) throw InputError("record: accuracy outside [0,1]");
  if (!unit(r.truncation_ratio)) throw InputError("record: truncation_ratio outside [0,1]");
  if (!unit(r.avg_at_k)) throw InputError("record: avg_at_k outside [0,1]");
  if (!(r.mean_resp_len >= 0.0)) throw InputError("record: negative mean_resp_len");
  if (!(r.avg_stopped_len >= 0.0)) throw InputError("record: negative avg_stopped_len");
  if (r.truncation_ratio == 1.0 && r.avg_stopped_len != 0.0)
    throw InputError("record: avg_stopped_len must be 0 when every response is truncated");
  double prev = -1.0;
  for (const auto& [k, v] : r.pass_at) {
    if (k < 1 || !unit(v)) throw InputError("record: pass_at entry out of range");
    if (v < prev) throw InputError("record: pass_at decreases in k");
    prev = v;
  }
  for (const auto& [label, v] : r.behavior_ratio)
    if (!unit(v)) throw InputError("record: behavior ratio '" + label + "' outside [0,1]");
  for (double x : {r.mean_reward, r.kl_mean, r.clip_active_frac})
    if (!std::isfinite(x)) throw InputError("record: non-finite diagnostic");
}

inline nlohmann::ordered_json to_json(const MetricsRecord& r) {
  nlohmann::ordered_json j;
  j["iter"] = r.iter;
  j["split"] = r.split == Split::train ? "train" : "eval";
  j["accuracy"] = r.accuracy;
  j["mean_resp_len"] = r.mean_resp_len;
  j["truncation_ratio"] = r.truncation_ratio;
  j["avg_stopped_len"] = r.avg_stopped_len;
  nlohmann::ordered_json pass = nlohmann::ordered_json::object();
  for (const auto& [k, v] : r.pass_at) pass[std::to_string(k)] = v;
  j["pass_at"] = pass;
  j["avg_at_k"] = r.avg_at_k;
  nlohmann::ordered_json beh = nlohmann::ordered_json::object();
  for (const auto& [label, v] : r.behavior_ratio) beh[label] = v;
  j["behavior_ratio"] = beh;
  j["mean_reward"] = r.mean_reward;
  j["kl_mean"] = r.kl_mean;
  j["clip_active_frac"] = r.clip_active_frac;
  j["schema_version"] = kLogSchemaVersion;
  return j;
}

inline std::string to_line(const MetricsRecord& r) { return to_json(r).dump() + "\n"; }

inline MetricsRecord record_from_json(const nlohmann::json& j) {
  static const char* kKeys[] = {"iter",          "split",          "accuracy",   "mean_resp_len",
                                "truncation_ratio", "avg_stopped_len", "pass_at", "avg_at_k",
                                "behavior_ratio", "mean_reward",    "kl_mean",    "clip_active_frac",
                                "schema_version"};
  if (!j.is_object()) throw InputError("log record is not an object");
  if (j.size() != std::size(kKeys)) throw InputError("log record has unexpected keys");
  for (const char* k : kKeys)
    if (!j.contains(k)) throw InputError(std::string("log record lacks '") + k + "'");
  if (j["schema_version"].get<int>() != kLogSchemaVersion)
    throw VersionError("unsupported log schema_version " + j["schema_version"].dump());
  MetricsRecord r;
  r.iter = j["iter"].get<std::int64_t>();
  const std::string split = j["split"].get<std::string>();
  if (split != "train" && split != "eval") throw InputError("log record has bad split");
  r.split = split == "train" ? Split::train : Split::eval;
  r.accuracy = j["accuracy"].get<double>();
  r.mean_resp_len = j["mean_resp_len"].get<double>();
  r.truncation_ratio = j["truncation_ratio"].get<double>();
  r.avg_stopped_len = j["avg_stopped_len"].get<double>();
  for (const auto& [k, v] : j["pass_at"].items()) r.pass_at[std::stoul(k)] = v.get<double>();
  r.avg_at_k = j["avg_at_k"].get<double>();
  for (const auto& [k, v] : j["behavior_ratio"].items()) r.behavior_ratio[k] = v.get<double>();
  r.mean_reward = j["mean_reward"].get<double>();
  r.kl_mean = j["kl_mean"].get<double>();
  r.clip_active_frac = j["clip_active_frac"].get<double>();
  return r;
}

inline MetricsRecord parse_record_line(const std::string& line) {
  try {
    return record_from_json(nlohmann::json::parse(line));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(e.byte, e.what());
  } catch (const nlohmann::json::type_error& e) {
    throw InputError(std::string("log record field has wrong type: ") + e.what());
  }
}

// The whole line goes out in one write(2) on an O_APPEND descriptor and is
// synced before returning, so readers never see half a record.
inline void append_record(const std::string& log_path, const MetricsRecord& record) {
  validate_record(record);
  const std::string line = to_line(record);
  const int fd = ::open(log_path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd < 0) throw IoError("cannot open log '" + log_path + "': " + std::strerror(errno));
  const ssize_t n = ::write(fd, line.data(), line.size());
  const int write_errno = errno;
  const bool synced = ::fsync(fd) == 0;
  ::close(fd);
  if (n != static_cast<ssize_t>(line.size()))
    throw IoError("short write to log '" + log_path + "': " + std::strerror(write_errno));
  if (!synced) throw IoError("cannot flush log '" + log_path + "'");
}

inline std::vector<MetricsRecord> read_log(const std::string& log_path) {
  std::ifstream in(log_path);
  if (!in) throw IoError("cannot read log '" + log_path + "'");
  std::vector<MetricsRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(parse_record_line(line));
  }
  return out;
}

}  // namespace zerorl
