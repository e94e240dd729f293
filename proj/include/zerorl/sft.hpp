#pragma once

// Supervised cold start: answer-only demonstrations trained by token-level
// cross-entropy with the same backward pass and optimizer as the RL loop.

#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "zerorl/errors.hpp"
#include "zerorl/policy.hpp"
#include "zerorl/rng.hpp"
#include "zerorl/tasks.hpp"
#include "zerorl/vocab.hpp"

namespace zerorl {

struct Demonstration {
  std::vector<TokenId> prompt;
  std::vector<TokenId> target;  // ends with EOS
  friend bool operator==(const Demonstration&, const Demonstration&) = default;
};

// simple: digits EOS; box: ANS_OPEN digits ANS_CLOSE EOS.
inline Demonstration gen_demonstration(const Task& task, PromptStyle style,
                                       const Vocabulary& vocab) {
  Demonstration d;
  d.prompt = render_prompt(task, style, vocab);
  if (style == PromptStyle::box) d.target.push_back(vocab.ans_open());
  const std::vector<TokenId> digits = vocab.encode(task.gold_answer);
  d.target.insert(d.target.end(), digits.begin(), digits.end());
  if (style == PromptStyle::box) d.target.push_back(vocab.ans_close());
  d.target.push_back(vocab.eos());
  return d;
}

struct SftConfig {
  std::size_t steps = 500;
  std::size_t batch = 32;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  std::vector<std::size_t> checkpoints{100, 500};
};

// Mean per-token negative log-likelihood of the batch targets; the
// gradient of that loss is added into `grad`.
inline double sft_loss_and_gradient(const PolicyParams& params,
                                    std::span<const Demonstration* const> batch, Gradient& grad) {
  std::size_t tokens = 0;
  for (const Demonstration* d : batch) tokens += d->target.size();
  if (tokens == 0) throw InputError("sft batch has no target tokens");
  const double w = -1.0 / static_cast<double>(tokens);
  double nll = 0.0;
  for (const Demonstration* d : batch) {
    const ForwardTrace tr = forward(params, d->prompt, d->target);
    for (double lp : tr.logprobs) nll -= lp;
    const std::vector<double> weights(d->target.size(), w);
    backward(params, tr, weights, grad);
  }
  return nll / static_cast<double>(tokens);
}

// Mean entropy of the next-token distribution over every target position
// of every demonstration.
inline double mean_token_entropy(const PolicyParams& params, std::span<const Demonstration> demos) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const Demonstration& d : demos) {
    const ForwardTrace tr = forward(params, d.prompt, d.target);
    for (double h : token_entropies(tr, params.arch().vocab)) {
      sum += h;
      ++n;
    }
  }
  if (n == 0) throw InputError("no demonstration tokens");
  return sum / static_cast<double>(n);
}

struct SftResult {
  PolicyParams params;                           // last good parameters
  std::map<std::size_t, PolicyParams> checkpoints;  // keyed by completed steps
  std::vector<double> loss_trace;                // loss before each update
  bool aborted = false;
  std::string error;
};

inline SftResult sft_train(const PolicyParams& theta, std::span<const Demonstration> demos,
                           const SftConfig& cfg) {
  if (demos.empty()) throw InputError("sft_train: no demonstrations");
  if (cfg.batch < 1) throw InputError("sft_train: batch must be at least 1");
  if (!(cfg.lr > 0.0)) throw InputError("sft_train: lr must be positive");
  SftResult res{theta, {}, {}, false, {}};
  auto maybe_checkpoint = [&](std::size_t step) {
    for (std::size_t c : cfg.checkpoints)
      if (c == step) res.checkpoints.emplace(step, res.params);
  };
  maybe_checkpoint(0);

  AdamState opt(theta.arch());
  Rng rng(cfg.seed);
  std::vector<const Demonstration*> batch(cfg.batch);
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    for (auto& d : batch) d = &demos[rng.below(demos.size())];
    Gradient grad(theta.arch());
    const double loss = sft_loss_and_gradient(res.params, batch, grad);
    if (!std::isfinite(loss)) {
      res.aborted = true;
      res.error = "non-finite loss at step " + std::to_string(step);
      return res;
    }
    res.loss_trace.push_back(loss);
    PolicyParams next = res.params;
    try {
      adam_step(next, grad, opt, cfg.lr);
    } catch (const NumericError& e) {
      res.aborted = true;
      res.error = e.what();
      return res;
    }
    if (!next.all_finite()) {
      res.aborted = true;
      res.error = "parameters became non-finite at step " + std::to_string(step);
      return res;
    }
    res.params = std::move(next);
    maybe_checkpoint(step);
  }
  return res;
}

}  // namespace zerorl
