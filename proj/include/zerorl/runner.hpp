#pragma once

// Run orchestration behind the CLI subcommands. Every random stream is
// derived from the configured seed, so identical configurations produce
// byte-identical logs and checkpoints.

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "zerorl/behavior.hpp"
#include "zerorl/checkpoint.hpp"
#include "zerorl/config.hpp"
#include "zerorl/grpo.hpp"
#include "zerorl/judge.hpp"
#include "zerorl/metrics.hpp"
#include "zerorl/report.hpp"
#include "zerorl/sft.hpp"
#include "zerorl/tasks.hpp"

namespace zerorl {

namespace streams {
inline constexpr std::uint64_t kTrain = 1;
inline constexpr std::uint64_t kEvalTasks = 2;
inline constexpr std::uint64_t kEvalSamples = 3;
inline constexpr std::uint64_t kSftDemos = 4;
inline constexpr std::uint64_t kSftBatches = 5;
}  // namespace streams

// Exclusive ownership of an output directory for the life of the object.
class OutDirLock {
 public:
  explicit OutDirLock(const std::string& dir) {
    std::filesystem::create_directories(dir);
    const std::string path = dir + "/.lock";
    fd_ = ::open(path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
    if (fd_ < 0) throw IoError("cannot open lock file '" + path + "'");
    if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
      ::close(fd_);
      throw IoError("output directory '" + dir + "' is in use by another run");
    }
  }
  ~OutDirLock() {
    if (fd_ >= 0) {
      ::flock(fd_, LOCK_UN);
      ::close(fd_);
    }
  }
  OutDirLock(const OutDirLock&) = delete;
  OutDirLock& operator=(const OutDirLock&) = delete;

 private:
  int fd_ = -1;
};

// k = 1, 2, 4, ... below n use the unbiased estimator; k = n is empirical.
inline std::map<std::size_t, double> pass_at_table(const CorrectFlags& flags) {
  std::map<std::size_t, double> out;
  const std::size_t n = flags.front().size();
  for (std::size_t k = 1; k < n; k *= 2) out[k] = pass_at_k(flags, k, PassEstimator::unbiased);
  out[n] = pass_at_k(flags, n, PassEstimator::empirical);
  return out;
}

inline std::map<std::string, double> keyword_behavior(const std::vector<std::string>& texts) {
  std::vector<MaybeLabels> labels;
  labels.reserve(texts.size());
  for (const auto& t : texts) labels.emplace_back(classify_keywords(t));
  return behavior_ratio(labels).ratio;
}

// Fills the rollout-derived fields shared by train and eval records.
inline MetricsRecord record_from_groups(const std::vector<Group>& groups, const Vocabulary& vocab,
                                        std::int64_t iter, Split split,
                                        std::vector<std::string>* texts_out = nullptr) {
  MetricsRecord rec;
  rec.iter = iter;
  rec.split = split;
  std::vector<Rollout> all;
  CorrectFlags flags;
  std::vector<std::string> texts;
  double reward = 0.0;
  for (const Group& g : groups) {
    auto& f = flags.emplace_back();
    for (const Rollout& r : g.rollouts) {
      f.push_back(r.reward == 1.0);
      reward += r.reward;
      texts.push_back(vocab.decode(r.response));
      all.push_back(r);
    }
  }
  const BatchStats st = batch_stats(all);
  rec.truncation_ratio = st.truncation_ratio;
  rec.avg_stopped_len = st.avg_stopped_len;
  rec.mean_resp_len = st.mean_resp_len;
  rec.avg_at_k = avg_at_k(flags);
  rec.accuracy = rec.avg_at_k;
  rec.pass_at = pass_at_table(flags);
  rec.behavior_ratio = keyword_behavior(texts);
  rec.mean_reward = reward / static_cast<double>(all.size());
  if (texts_out) *texts_out = std::move(texts);
  return rec;
}

struct TaskSplit {
  std::vector<Task> train;  // empty: use the synthetic generator
  std::vector<Task> eval;
};

// Synthetic mode draws a held-out evaluation set from its own stream. With a
// dataset, the last fifth of the tier bucket (at least one task) is held out.
inline TaskSplit split_tasks(const TrainConfig& cfg, const Dataset* dataset) {
  TaskSplit s;
  if (dataset) {
    const auto& bucket = dataset->bucket(cfg.tier);
    if (bucket.empty())
      throw ConfigError("tier", "dataset has no tasks for tier " + std::string(to_string(cfg.tier)));
    const std::size_t held = bucket.size() < 2 ? 0 : std::max<std::size_t>(1, bucket.size() / 5);
    s.train.assign(bucket.begin(), bucket.end() - static_cast<std::ptrdiff_t>(held));
    s.eval.assign(bucket.end() - static_cast<std::ptrdiff_t>(held), bucket.end());
    if (s.eval.empty()) s.eval = s.train;
    if (s.eval.size() > cfg.eval_tasks) s.eval.resize(cfg.eval_tasks);
    return s;
  }
  Rng rng = Rng::derive(cfg.seed, streams::kEvalTasks);
  for (std::size_t i = 0; i < cfg.eval_tasks; ++i) s.eval.push_back(gen_task(cfg.tier, rng));
  return s;
}

struct EvalOutput {
  MetricsRecord record;
  std::vector<std::string> responses;
};

// eval_samples rollouts per held-out task at the evaluation temperature and
// top-p. The sampling stream restarts from the seed on every call, so the
// same parameters always give the same record.
inline EvalOutput evaluate(const PolicyParams& params, const TrainConfig& cfg,
                           const Vocabulary& vocab, const std::vector<Task>& tasks,
                           std::int64_t iter) {
  Rng rng = Rng::derive(cfg.seed, streams::kEvalSamples);
  std::vector<Group> groups;
  groups.reserve(tasks.size());
  const SamplingConfig sampling = cfg.eval_sampling();
  for (const Task& t : tasks)
    groups.push_back(sample_group(params, t, cfg.eval_samples, sampling, cfg.prompt_style,
                                  cfg.reward_mode, vocab, rng));
  EvalOutput out;
  out.record = record_from_groups(groups, vocab, iter, Split::eval, &out.responses);
  return out;
}

inline MetricsRecord train_record(const IterationResult& it, const Vocabulary& vocab,
                                  std::int64_t iter) {
  MetricsRecord rec = record_from_groups(it.groups, vocab, iter, Split::train);
  rec.kl_mean = it.diag.mean_kl;
  rec.clip_active_frac = it.diag.clip_active_frac;
  return rec;
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << text;
  if (!out) throw IoError("short write to '" + path + "'");
}

struct StartingPoint {
  PolicyParams params;
  std::string provenance;
};

inline StartingPoint starting_point(const RunConfig& rc, const Vocabulary& vocab) {
  if (!rc.init_checkpoint.empty()) {
    Checkpoint c = load_checkpoint(rc.init_checkpoint);
    if (c.vocab != vocab.tokens())
      throw ConfigError("init_checkpoint", "checkpoint vocabulary does not match");
    return {std::move(c.params), c.provenance};
  }
  const Arch arch{rc.train.embed_dim, rc.train.hidden_dim, vocab.size()};
  return {init_params(arch, rc.train.seed, rc.init_range), "base"};
}

inline std::optional<Dataset> load_dataset(const RunConfig& rc) {
  if (rc.dataset_path.empty()) return std::nullopt;
  return ingest_dataset(rc.dataset_path);
}

struct TrainRunResult {
  std::vector<MetricsRecord> records;
  Checkpoint checkpoint;
};

// Optional per-iteration hook, used by tests and the CLI progress line.
using IterationHook = std::function<void(std::size_t iter, const IterationResult&)>;

// GRPO training with periodic evaluation. The reference policy is the
// starting point of the run. Writes config.resolved, log.jsonl and
// checkpoint.json (replaced atomically at every evaluation).
inline TrainRunResult run_train(const ResolvedConfig& resolved, const IterationHook& hook = {}) {
  const RunConfig& rc = resolved.config();
  rc.validate();
  OutDirLock lock(rc.out_dir);
  write_text_file(rc.out_dir + "/config.resolved", resolved.echo().dump(2) + "\n");

  const Vocabulary& vocab = Vocabulary::standard();
  const auto dataset = load_dataset(rc);
  const TaskSplit split = split_tasks(rc.train, dataset ? &*dataset : nullptr);
  const TaskSource source{rc.train.tier, split.train.empty() ? nullptr : &split.train};

  StartingPoint start = starting_point(rc, vocab);
  PolicyParams theta = std::move(start.params);
  const PolicyParams ref = theta;
  AdamState opt(theta.arch());
  Rng rng = Rng::derive(rc.train.seed, streams::kTrain);

  const std::string log_path = rc.resolved_log_path();
  std::filesystem::remove(log_path);
  const std::string ckpt_path = rc.out_dir + "/checkpoint.json";

  TrainRunResult res;
  auto checkpoint = [&](std::size_t iter, const std::string& provenance) {
    res.checkpoint = Checkpoint{vocab.tokens(), theta, opt, rng.state(),
                                static_cast<std::int64_t>(iter), provenance};
    save_checkpoint(ckpt_path, res.checkpoint);
  };
  auto emit = [&](const MetricsRecord& rec) {
    append_record(log_path, rec);
    res.records.push_back(rec);
  };

  emit(evaluate(theta, rc.train, vocab, split.eval, 0).record);
  checkpoint(0, start.provenance);
  for (std::size_t it = 1; it <= rc.train.iterations; ++it) {
    const IterationResult step = train_iteration(theta, ref, opt, source, rc.train, vocab, rng);
    emit(train_record(step, vocab, static_cast<std::int64_t>(it)));
    if (hook) hook(it, step);
    if (it % rc.train.eval_every == 0 || it == rc.train.iterations) {
      emit(evaluate(theta, rc.train, vocab, split.eval, static_cast<std::int64_t>(it)).record);
      checkpoint(it, "rl");
    }
  }
  return res;
}

// Evaluates a checkpoint on the held-out set of the configured tier. With a
// judge, behavior ratios come from the judge instead of keyword matching.
inline MetricsRecord run_eval(const ResolvedConfig& resolved, const std::string& checkpoint_path,
                              const JudgeConfig* judge = nullptr) {
  const RunConfig& rc = resolved.config();
  rc.validate();
  const Vocabulary& vocab = Vocabulary::standard();
  const Checkpoint c = load_checkpoint(checkpoint_path);
  if (c.vocab != vocab.tokens())
    throw ConfigError("init_checkpoint", "checkpoint vocabulary does not match");
  const auto dataset = load_dataset(rc);
  const TaskSplit split = split_tasks(rc.train, dataset ? &*dataset : nullptr);
  EvalOutput out = evaluate(c.params, rc.train, vocab, split.eval, c.iter);
  if (judge) {
    const auto outcomes = judge_classify_all(*judge, out.responses);
    std::vector<MaybeLabels> labels;
    for (const auto& o : outcomes) labels.push_back(o.labels);
    const BehaviorRatios br = behavior_ratio(labels);
    out.record.behavior_ratio = br.ratio;
    std::clog << "judge coverage " << br.coverage << "\n";
  }
  return out.record;
}

struct SftRunResult {
  SftResult sft;
  std::map<std::size_t, double> entropy;  // checkpoint step -> mean token entropy
};

// Answer-only demonstrations for the configured tier and prompt style;
// writes sft_stepN.json checkpoints, sft_loss.csv and sft_summary.json.
inline SftRunResult run_sft(const ResolvedConfig& resolved) {
  const RunConfig& rc = resolved.config();
  rc.validate();
  OutDirLock lock(rc.out_dir);
  write_text_file(rc.out_dir + "/config.resolved", resolved.echo().dump(2) + "\n");
  const Vocabulary& vocab = Vocabulary::standard();

  std::vector<Demonstration> demos;
  Rng demo_rng = Rng::derive(rc.train.seed, streams::kSftDemos);
  const auto dataset = load_dataset(rc);
  const TaskSplit split = split_tasks(rc.train, dataset ? &*dataset : nullptr);
  for (std::size_t i = 0; i < rc.sft_demos; ++i) {
    const Task t = split.train.empty() ? gen_task(rc.train.tier, demo_rng)
                                       : split.train[demo_rng.below(split.train.size())];
    demos.push_back(gen_demonstration(t, rc.train.prompt_style, vocab));
  }

  StartingPoint start = starting_point(rc, vocab);
  SftConfig sc{rc.sft_steps, rc.sft_batch, rc.sft_lr,
               Rng::derive(rc.train.seed, streams::kSftBatches).next_u64(), rc.sft_checkpoints};
  SftRunResult out;
  out.sft = sft_train(start.params, demos, sc);

  std::ostringstream trace;
  trace << "step,loss\n";
  for (std::size_t i = 0; i < out.sft.loss_trace.size(); ++i)
    trace << i << ',' << format_double(out.sft.loss_trace[i]) << '\n';
  write_text_file(rc.out_dir + "/sft_loss.csv", trace.str());

  nlohmann::ordered_json summary;
  summary["aborted"] = out.sft.aborted;
  summary["error"] = out.sft.error;
  nlohmann::ordered_json ent = nlohmann::ordered_json::object();
  ent["0"] = mean_token_entropy(start.params, demos);
  out.entropy[0] = ent["0"].get<double>();
  for (const auto& [step, params] : out.sft.checkpoints) {
    const std::string tag = "sft_step" + std::to_string(step);
    save_checkpoint(rc.out_dir + "/" + tag + ".json",
                    Checkpoint{vocab.tokens(), params, AdamState(params.arch()), "",
                               static_cast<std::int64_t>(0), tag});
    out.entropy[step] = mean_token_entropy(params, demos);
    ent[std::to_string(step)] = out.entropy[step];
  }
  summary["entropy"] = ent;
  write_text_file(rc.out_dir + "/sft_summary.json", summary.dump(2) + "\n");
  if (out.sft.aborted) throw NumericError("sft aborted: " + out.sft.error);
  return out;
}

enum class SweepGrid { group_size, temperature, all };

inline const std::vector<std::size_t>& sweep_group_sizes() {
  static const std::vector<std::size_t> v{1, 4, 8, 16, 32};
  return v;
}

inline const std::vector<double>& sweep_temperatures() {
  static const std::vector<double> v{0.6, 0.8, 1.0, 1.2};
  return v;
}

inline std::string temperature_tag(double t) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(1);
  os << t;
  return os.str();
}

struct SweepChild {
  std::string name;
  ResolvedConfig config;
  std::vector<double> eval_temperatures;  // extra evaluations of the final checkpoint
};

// Sampling-size grid: children n1..n32. Temperature grid: one child per
// training temperature (t0.6 ...), whose final checkpoint is re-evaluated
// at every grid temperature into eval_t<T>.jsonl. Child i runs with seed
// base + i.
inline std::vector<SweepChild> plan_sweep(const ResolvedConfig& base, SweepGrid grid) {
  std::vector<SweepChild> children;
  const RunConfig& rc = base.config();
  auto make = [&](const std::string& name) {
    SweepChild c{name, base, {}};
    c.config.set("out_dir", rc.out_dir + "/" + name, ConfigSource::flag);
    c.config.set("log_path", "", ConfigSource::flag);
    c.config.set("seed", rc.train.seed + children.size(), ConfigSource::flag);
    return c;
  };
  if (grid == SweepGrid::group_size || grid == SweepGrid::all)
    for (std::size_t n : sweep_group_sizes()) {
      SweepChild c = make("n" + std::to_string(n));
      c.config.set("group_size", n, ConfigSource::flag);
      children.push_back(std::move(c));
    }
  if (grid == SweepGrid::temperature || grid == SweepGrid::all)
    for (double t : sweep_temperatures()) {
      SweepChild c = make("t" + temperature_tag(t));
      c.config.set("temperature", t, ConfigSource::flag);
      c.eval_temperatures = sweep_temperatures();
      children.push_back(std::move(c));
    }
  return children;
}

inline void run_sweep_child(const SweepChild& child) {
  const TrainRunResult res = run_train(child.config);
  const RunConfig& rc = child.config.config();
  const Vocabulary& vocab = Vocabulary::standard();
  const auto dataset = load_dataset(rc);
  for (double t : child.eval_temperatures) {
    TrainConfig cfg = rc.train;
    cfg.eval_temperature = t;
    const TaskSplit split = split_tasks(cfg, dataset ? &*dataset : nullptr);
    const std::string path = rc.out_dir + "/eval_t" + temperature_tag(t) + ".jsonl";
    std::filesystem::remove(path);
    append_record(path,
                  evaluate(res.checkpoint.params, cfg, vocab, split.eval, res.checkpoint.iter).record);
  }
}

inline std::vector<SweepChild> run_sweep(const ResolvedConfig& base, SweepGrid grid,
                                         bool parallel) {
  std::vector<SweepChild> children = plan_sweep(base, grid);
  if (!parallel) {
    for (const auto& c : children) run_sweep_child(c);
    return children;
  }
  std::vector<std::exception_ptr> errors(children.size());
  std::vector<std::thread> pool;
  for (std::size_t i = 0; i < children.size(); ++i)
    pool.emplace_back([&, i] {
      try {
        run_sweep_child(children[i]);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return children;
}

}  // namespace zerorl
