// zerorl: train / sft / eval / report / sweep front end.
// Exit status: 0 success, 1 runtime or configuration failure, 2 usage error.

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "zerorl/runner.hpp"

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> iters;
  std::optional<std::string> tier;
  std::optional<std::string> reward_mode;
  std::optional<std::size_t> group_size;
  std::optional<double> temperature;
  std::optional<std::string> out_dir;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "JSON configuration file")->required();
  cmd->add_option("--seed", o.seed);
  cmd->add_option("--iters", o.iters);
  cmd->add_option("--tier", o.tier);
  cmd->add_option("--reward-mode", o.reward_mode);
  cmd->add_option("--group-size", o.group_size);
  cmd->add_option("--temperature", o.temperature);
  cmd->add_option("--out-dir", o.out_dir);
}

zerorl::ResolvedConfig resolve(const Overrides& o) {
  using zerorl::ConfigSource;
  zerorl::ResolvedConfig rc;
  rc.apply_file(o.config);
  if (o.seed) rc.set("seed", *o.seed, ConfigSource::flag);
  if (o.iters) rc.set("iterations", *o.iters, ConfigSource::flag);
  if (o.tier) rc.set("tier", *o.tier, ConfigSource::flag);
  if (o.reward_mode) rc.set("reward_mode", *o.reward_mode, ConfigSource::flag);
  if (o.group_size) rc.set("group_size", *o.group_size, ConfigSource::flag);
  if (o.temperature) rc.set("temperature", *o.temperature, ConfigSource::flag);
  if (o.out_dir) rc.set("out_dir", *o.out_dir, ConfigSource::flag);
  rc.config().validate();
  return rc;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GRPO on synthetic arithmetic with a tiny recurrent policy"};
  app.require_subcommand(1);

  Overrides train_o, sft_o, eval_o, report_o, sweep_o;
  auto* train = app.add_subcommand("train", "GRPO training with periodic evaluation");
  add_common(train, train_o);
  bool quiet = false;
  train->add_flag("--quiet", quiet, "no per-iteration progress");

  auto* sft = app.add_subcommand("sft", "supervised fine-tuning on answer-only demonstrations");
  add_common(sft, sft_o);

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint and print one record");
  add_common(eval, eval_o);
  std::string checkpoint;
  bool judge = false;
  eval->add_option("--checkpoint", checkpoint, "defaults to <out_dir>/checkpoint.json");
  eval->add_flag("--judge", judge, "behavior ratios from the LLM judge (ZF_JUDGE_* env)");

  auto* report = app.add_subcommand("report", "render report.csv and report.svg from a log");
  add_common(report, report_o);

  auto* sweep = app.add_subcommand("sweep", "group-size and temperature grids");
  add_common(sweep, sweep_o);
  std::string grid = "all";
  bool parallel = false;
  sweep->add_option("--grid", grid)->check(CLI::IsMember({"group_size", "temperature", "all"}));
  sweep->add_flag("--parallel", parallel, "run children concurrently");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*train) {
      const auto rc = resolve(train_o);
      zerorl::IterationHook hook;
      if (!quiet)
        hook = [](std::size_t it, const zerorl::IterationResult& r) {
          std::clog << "iter " << it << " reward " << r.diag.mean_reward << " kl "
                    << r.diag.mean_kl << "\n";
        };
      const auto res = zerorl::run_train(rc, hook);
      std::cout << zerorl::to_line(res.records.back());
    } else if (*sft) {
      const auto res = zerorl::run_sft(resolve(sft_o));
      for (const auto& [step, h] : res.entropy)
        std::cout << "step " << step << " entropy " << zerorl::format_double(h) << "\n";
    } else if (*eval) {
      const auto rc = resolve(eval_o);
      const std::string path =
          checkpoint.empty() ? rc.config().out_dir + "/checkpoint.json" : checkpoint;
      std::optional<zerorl::JudgeConfig> jc;
      if (judge) {
        jc = zerorl::JudgeConfig::from_env();
        jc->validate();
      }
      std::cout << zerorl::to_line(zerorl::run_eval(rc, path, jc ? &*jc : nullptr));
    } else if (*report) {
      const auto rc = resolve(report_o);
      const auto files =
          zerorl::emit_report(rc.config().resolved_log_path(), rc.config().out_dir);
      std::cout << files.csv_path << "\n" << files.svg_path << "\n";
    } else if (*sweep) {
      const auto g = grid == "group_size"    ? zerorl::SweepGrid::group_size
                     : grid == "temperature" ? zerorl::SweepGrid::temperature
                                             : zerorl::SweepGrid::all;
      for (const auto& c : zerorl::run_sweep(resolve(sweep_o), g, parallel))
        std::cout << c.config.config().out_dir << "\n";
    }
  } catch (const zerorl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
