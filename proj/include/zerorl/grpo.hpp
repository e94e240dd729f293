#pragma once

// Group-relative policy optimization: group-standardized advantages, the
// token-level clipped objective with a per-token KL penalty, and one
// training iteration (rollout -> reward -> loss -> update).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "zerorl/errors.hpp"
#include "zerorl/policy.hpp"
#include "zerorl/rng.hpp"
#include "zerorl/tasks.hpp"
#include "zerorl/verify.hpp"
#include "zerorl/vocab.hpp"

namespace zerorl {

struct TrainConfig {
  std::size_t group_size = 8;
  std::size_t prompt_batch = 64;
  std::size_t mini_batch = 16;
  double clip_epsilon = 0.2;
  double kl_coef = 1e-4;
  double lr = 2e-3;
  double temperature = 1.0;
  double top_p = 1.0;
  std::size_t max_new_tokens = 4;
  Tier tier = Tier::easy;
  PromptStyle prompt_style = PromptStyle::simple;
  RewardMode reward_mode = RewardMode::correctness;
  std::size_t iterations = 300;
  std::size_t eval_every = 25;
  std::size_t eval_samples = 8;
  std::size_t eval_tasks = 200;
  double eval_temperature = 1.0;
  double eval_top_p = 0.95;
  std::uint64_t seed = 0;
  std::size_t embed_dim = 16;
  std::size_t hidden_dim = 32;

  SamplingConfig sampling() const { return {temperature, top_p, max_new_tokens}; }
  SamplingConfig eval_sampling() const { return {eval_temperature, eval_top_p, max_new_tokens}; }

  // Throws ConfigError naming the first offending key.
  void validate() const {
    auto fail = [](const char* key, const char* what) { throw ConfigError(key, what); };
    if (group_size < 1) fail("group_size", "must be at least 1");
    if (prompt_batch < 1) fail("prompt_batch", "must be at least 1");
    if (mini_batch < 1 || prompt_batch % mini_batch != 0)
      fail("mini_batch", "must be positive and divide prompt_batch");
    if (!(clip_epsilon > 0.0 && clip_epsilon < 1.0)) fail("clip_epsilon", "must lie in (0, 1)");
    if (!(kl_coef >= 0.0) || !std::isfinite(kl_coef)) fail("kl_coef", "must be >= 0");
    if (!(lr > 0.0) || !std::isfinite(lr)) fail("lr", "must be positive");
    if (!(temperature > 0.0) || !std::isfinite(temperature)) fail("temperature", "must be positive");
    if (!(top_p > 0.0 && top_p <= 1.0)) fail("top_p", "must lie in (0, 1]");
    if (max_new_tokens < 1) fail("max_new_tokens", "must be at least 1");
    if (eval_every < 1) fail("eval_every", "must be at least 1");
    if (eval_samples < 1) fail("eval_samples", "must be at least 1");
    if (eval_tasks < 1) fail("eval_tasks", "must be at least 1");
    if (!(eval_temperature > 0.0) || !std::isfinite(eval_temperature))
      fail("eval_temperature", "must be positive");
    if (!(eval_top_p > 0.0 && eval_top_p <= 1.0)) fail("eval_top_p", "must lie in (0, 1]");
    if (embed_dim < 1) fail("embed_dim", "must be at least 1");
    if (hidden_dim < 1) fail("hidden_dim", "must be at least 1");
  }
};

struct Group {
  Task task;
  std::vector<Rollout> rollouts;
  std::vector<double> advantages;
};

inline constexpr double kStdGuard = 1e-8;

// (r_i - mean) / std with the population standard deviation. Groups whose
// rewards are all equal (std below the guard, including G = 1) get zeros.
inline std::vector<double> group_advantages(std::span<const double> rewards) {
  if (rewards.empty()) throw InputError("group_advantages: empty reward group");
  const double n = static_cast<double>(rewards.size());
  const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double sd = std::sqrt(var / n);
  std::vector<double> adv(rewards.size(), 0.0);
  if (sd < kStdGuard) return adv;
  for (std::size_t i = 0; i < rewards.size(); ++i) adv[i] = (rewards[i] - mean) / sd;
  return adv;
}

struct ClippedTerm {
  double value = 0.0;
  bool clip_active = false;
};

inline ClippedTerm clipped_term(double ratio, double advantage, double eps) {
  const double unclipped = ratio * advantage;
  const double clipped = std::clamp(ratio, 1.0 - eps, 1.0 + eps) * advantage;
  if (clipped < unclipped) return {clipped, true};
  return {unclipped, false};
}

struct KlTerm {
  double value = 0.0;
  double grad_weight = 0.0;  // coefficient on grad log pi_theta
};

// rho - log(rho) - 1 with rho = pi_ref / pi_theta.
inline KlTerm kl_k3(double logp_theta, double logp_ref) {
  const double log_rho = logp_ref - logp_theta;
  const double rho = std::exp(log_rho);
  return {rho - log_rho - 1.0, 1.0 - rho};
}

struct TokenTerm {
  double ratio = 1.0;
  double clipped_value = 0.0;
  bool clip_active = false;
  double kl_value = 0.0;
  double loss_weight = 0.0;
};

struct LossResult {
  double loss = 0.0;
  // weights[g][i][t]: coefficient on grad log pi_theta(o_{i,t}); summing
  // weight * grad log pi over all tokens yields the exact loss gradient.
  std::vector<std::vector<std::vector<double>>> weights;
  double mean_ratio = 0.0;
  double mean_kl = 0.0;
  double clip_active_frac = 0.0;
  std::size_t tokens = 0;
};

namespace detail {

inline LossResult loss_from_logprobs(
    std::span<const Group> groups, const std::vector<std::vector<std::vector<double>>>& theta_lp,
    const std::vector<std::vector<std::vector<double>>>& old_lp,
    const std::vector<std::vector<std::vector<double>>>& ref_lp, const TrainConfig& cfg) {
  LossResult out;
  std::size_t total = 0;
  for (const Group& g : groups) {
    if (g.advantages.size() != g.rollouts.size())
      throw InputError("group advantages not filled");
    for (const Rollout& r : g.rollouts) {
      if (r.response.empty()) throw InputError("empty rollout response");
      total += r.response.size();
    }
  }
  if (total == 0) throw InputError("empty batch");
  const double norm = 1.0 / static_cast<double>(total);

  double objective = 0.0, kl_sum = 0.0, ratio_sum = 0.0;
  std::size_t clipped = 0;
  out.weights.resize(groups.size());
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const Group& g = groups[gi];
    out.weights[gi].resize(g.rollouts.size());
    for (std::size_t i = 0; i < g.rollouts.size(); ++i) {
      const double adv = g.advantages[i];
      const std::size_t len = g.rollouts[i].response.size();
      auto& w = out.weights[gi][i];
      w.assign(len, 0.0);
      for (std::size_t t = 0; t < len; ++t) {
        const double lp = theta_lp[gi][i][t];
        const double ratio = std::exp(lp - old_lp[gi][i][t]);
        if (!std::isfinite(ratio))
          throw NumericError("non-finite importance ratio in group " + std::to_string(gi) +
                             " rollout " + std::to_string(i) + " token " + std::to_string(t));
        const ClippedTerm ct = clipped_term(ratio, adv, cfg.clip_epsilon);
        const KlTerm kl = kl_k3(lp, ref_lp[gi][i][t]);
        objective += ct.value;
        kl_sum += kl.value;
        ratio_sum += ratio;
        if (ct.clip_active) ++clipped;
        double weight = cfg.kl_coef * kl.grad_weight;
        if (!ct.clip_active) weight -= adv * ratio;
        w[t] = weight * norm;
      }
    }
  }
  out.loss = -(objective * norm) + cfg.kl_coef * kl_sum * norm;
  out.mean_ratio = ratio_sum * norm;
  out.mean_kl = kl_sum * norm;
  out.clip_active_frac = static_cast<double>(clipped) * norm;
  out.tokens = total;
  if (!std::isfinite(out.loss)) throw NumericError("non-finite loss");
  return out;
}

}  // namespace detail

// Loss = -J where J is the clipped objective minus beta times the KL
// penalty, both normalized by the total token count across all groups.
inline LossResult grpo_loss_weights(std::span<const Group> groups, const PolicyParams& theta,
                                    const PolicyParams& old, const PolicyParams& ref,
                                    const TrainConfig& cfg) {
  using Nested = std::vector<std::vector<std::vector<double>>>;
  Nested th(groups.size()), ol(groups.size()), rf(groups.size());
  for (std::size_t gi = 0; gi < groups.size(); ++gi)
    for (const Rollout& r : groups[gi].rollouts) {
      th[gi].push_back(sequence_logprobs(theta, r.prompt, r.response));
      ol[gi].push_back(sequence_logprobs(old, r.prompt, r.response));
      rf[gi].push_back(sequence_logprobs(ref, r.prompt, r.response));
    }
  return detail::loss_from_logprobs(groups, th, ol, rf, cfg);
}

struct LossAndGradient {
  LossResult loss;
  Gradient grad;
};

// Loss plus its exact gradient. The importance-ratio denominator comes from
// each rollout's cached policy_logprobs, which were recorded under the
// sampling (old) policy. Gradients reduce in group, then rollout order.
inline LossAndGradient grpo_loss_and_gradient(std::span<const Group> groups,
                                              const PolicyParams& theta, const PolicyParams& ref,
                                              const TrainConfig& cfg) {
  using Nested = std::vector<std::vector<std::vector<double>>>;
  std::vector<std::vector<ForwardTrace>> traces(groups.size());
  Nested th(groups.size()), ol(groups.size()), rf(groups.size());
  for (std::size_t gi = 0; gi < groups.size(); ++gi)
    for (const Rollout& r : groups[gi].rollouts) {
      if (r.policy_logprobs.size() != r.response.size())
        throw InputError("rollout lacks cached policy log-probabilities");
      traces[gi].push_back(forward(theta, r.prompt, r.response));
      th[gi].push_back(traces[gi].back().logprobs);
      ol[gi].push_back(r.policy_logprobs);
      rf[gi].push_back(sequence_logprobs(ref, r.prompt, r.response));
    }
  LossAndGradient out{detail::loss_from_logprobs(groups, th, ol, rf, cfg), Gradient(theta.arch())};
  for (std::size_t gi = 0; gi < groups.size(); ++gi)
    for (std::size_t i = 0; i < traces[gi].size(); ++i)
      backward(theta, traces[gi][i], out.loss.weights[gi][i], out.grad);
  return out;
}

// Where training prompts come from: the synthetic generator for a tier, or
// one tier bucket of an ingested dataset.
struct TaskSource {
  Tier tier = Tier::easy;
  const std::vector<Task>* pool = nullptr;

  Task draw(Rng& rng) const {
    if (pool) {
      if (pool->empty()) throw InputError("empty task pool for tier");
      return (*pool)[rng.below(pool->size())];
    }
    return gen_task(tier, rng);
  }
};

inline double score_rollout(const Rollout& r, const Task& task, RewardMode mode,
                            const Vocabulary& vocab) {
  return compute_reward(vocab.decode(r.response), task.gold_answer, mode);
}

// Samples `count` rollouts for one task and scores them.
inline Group sample_group(const PolicyParams& policy, const Task& task, std::size_t count,
                          const SamplingConfig& sampling, PromptStyle style, RewardMode mode,
                          const Vocabulary& vocab, Rng& rng) {
  Group g;
  g.task = task;
  const std::vector<TokenId> prompt = render_prompt(task, style, vocab);
  g.rollouts.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Rollout r = sample_sequence(policy, prompt, sampling, rng, vocab.eos());
    r.reward = score_rollout(r, task, mode, vocab);
    g.rollouts.push_back(std::move(r));
  }
  return g;
}

struct IterationDiagnostics {
  double mean_reward = 0.0;
  double truncation_ratio = 0.0;
  double mean_kl = 0.0;
  double clip_active_frac = 0.0;
  double mean_ratio = 0.0;
  double mean_length = 0.0;
  double loss = 0.0;  // mean over mini-batches
  std::size_t updates = 0;
};

struct IterationResult {
  IterationDiagnostics diag;
  std::vector<Group> groups;
};

// One iteration: snapshot old <- theta, sample prompt_batch groups of G
// rollouts from old, score, standardize per group, then one Adam step per
// mini-batch of groups against the fixed old and ref policies.
inline IterationResult train_iteration(PolicyParams& theta, const PolicyParams& ref,
                                       AdamState& opt, const TaskSource& source,
                                       const TrainConfig& cfg, const Vocabulary& vocab, Rng& rng) {
  cfg.validate();
  const PolicyParams old = theta;
  IterationResult res;
  res.groups.reserve(cfg.prompt_batch);
  const SamplingConfig sampling = cfg.sampling();
  for (std::size_t q = 0; q < cfg.prompt_batch; ++q) {
    const Task task = source.draw(rng);
    Group g = sample_group(old, task, cfg.group_size, sampling, cfg.prompt_style,
                           cfg.reward_mode, vocab, rng);
    std::vector<double> rewards;
    for (const Rollout& r : g.rollouts) rewards.push_back(r.reward);
    g.advantages = group_advantages(rewards);
    res.groups.push_back(std::move(g));
  }

  // Candidate parameters are committed only after every mini-batch succeeds.
  PolicyParams next = theta;
  AdamState next_opt = opt;
  double kl_tok = 0.0, clip_tok = 0.0, ratio_tok = 0.0, loss_sum = 0.0;
  std::size_t tokens = 0;
  const std::size_t batches = cfg.prompt_batch / cfg.mini_batch;
  for (std::size_t mb = 0; mb < batches; ++mb) {
    std::span<const Group> slice(res.groups.data() + mb * cfg.mini_batch, cfg.mini_batch);
    LossAndGradient lg = grpo_loss_and_gradient(slice, next, ref, cfg);
    adam_step(next, lg.grad, next_opt, cfg.lr);
    if (!next.all_finite()) throw NumericError("parameters became non-finite");
    kl_tok += lg.loss.mean_kl * static_cast<double>(lg.loss.tokens);
    clip_tok += lg.loss.clip_active_frac * static_cast<double>(lg.loss.tokens);
    ratio_tok += lg.loss.mean_ratio * static_cast<double>(lg.loss.tokens);
    loss_sum += lg.loss.loss;
    tokens += lg.loss.tokens;
  }
  theta = std::move(next);
  opt = std::move(next_opt);

  std::size_t n = 0, truncated = 0;
  double reward = 0.0, length = 0.0;
  for (const Group& g : res.groups)
    for (const Rollout& r : g.rollouts) {
      ++n;
      reward += r.reward;
      length += static_cast<double>(r.response.size());
      if (!r.stopped) ++truncated;
    }
  auto& d = res.diag;
  d.mean_reward = reward / static_cast<double>(n);
  d.mean_length = length / static_cast<double>(n);
  d.truncation_ratio = static_cast<double>(truncated) / static_cast<double>(n);
  d.mean_kl = kl_tok / static_cast<double>(tokens);
  d.clip_active_frac = clip_tok / static_cast<double>(tokens);
  d.mean_ratio = ratio_tok / static_cast<double>(tokens);
  d.loss = loss_sum / static_cast<double>(batches);
  d.updates = batches;
  return res;
}

}  // namespace zerorl
