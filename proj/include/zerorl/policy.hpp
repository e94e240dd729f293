#pragma once

// Tiny recurrent token policy:
//   h' = tanh(W_x e(token) + W_h h + b)
//   logits = W_o h' + b_o
// with exact log-probabilities, temperature / nucleus sampling and
// hand-written backpropagation through time.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "zerorl/errors.hpp"
#include "zerorl/rng.hpp"
#include "zerorl/vocab.hpp"

namespace zerorl {

struct Arch {
  std::size_t embed = 16;
  std::size_t hidden = 32;
  std::size_t vocab = 0;

  std::size_t param_count() const {
    return vocab * embed + hidden * embed + hidden * hidden + hidden + vocab * hidden + vocab;
  }
  friend bool operator==(const Arch&, const Arch&) = default;
};

// All weights in one flat buffer; block views are carved out by offset.
// Also used for gradients and optimizer moments, which share the shape.
class PolicyParams {
 public:
  PolicyParams() = default;
  explicit PolicyParams(Arch arch) : arch_(arch), data_(arch.param_count(), 0.0) {
    if (arch.embed == 0 || arch.hidden == 0 || arch.vocab == 0)
      throw InputError("policy dimensions must be positive");
  }

  const Arch& arch() const { return arch_; }
  std::size_t size() const { return data_.size(); }
  std::span<double> flat() { return data_; }
  std::span<const double> flat() const { return data_; }

  // embedding: vocab x embed
  double* embedding() { return data_.data(); }
  const double* embedding() const { return data_.data(); }
  // W_x: hidden x embed
  double* w_x() { return embedding() + arch_.vocab * arch_.embed; }
  const double* w_x() const { return embedding() + arch_.vocab * arch_.embed; }
  // W_h: hidden x hidden
  double* w_h() { return w_x() + arch_.hidden * arch_.embed; }
  const double* w_h() const { return w_x() + arch_.hidden * arch_.embed; }
  double* b() { return w_h() + arch_.hidden * arch_.hidden; }
  const double* b() const { return w_h() + arch_.hidden * arch_.hidden; }
  // W_o: vocab x hidden
  double* w_o() { return b() + arch_.hidden; }
  const double* w_o() const { return b() + arch_.hidden; }
  double* b_o() { return w_o() + arch_.vocab * arch_.hidden; }
  const double* b_o() const { return w_o() + arch_.vocab * arch_.hidden; }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
  }

  friend bool operator==(const PolicyParams&, const PolicyParams&) = default;

 private:
  Arch arch_;
  std::vector<double> data_;
};

using Gradient = PolicyParams;

// Uniform in [-range, range]. Small ranges give a contractive recurrence that
// forgets the first operand before the answer position; 1.0 does not.
inline constexpr double kDefaultInitRange = 1.0;

inline PolicyParams init_params(Arch arch, std::uint64_t seed, double range = kDefaultInitRange) {
  if (!(range > 0.0)) throw InputError("init range must be positive");
  PolicyParams p(arch);
  Rng rng(seed);
  for (double& x : p.flat()) x = rng.uniform(-range, range);
  return p;
}

struct SamplingConfig {
  double temperature = 1.0;
  double top_p = 1.0;
  std::size_t max_new_tokens = 8;

  void validate() const {
    if (!(temperature > 0.0) || !std::isfinite(temperature))
      throw InputError("temperature must be positive");
    if (!(top_p > 0.0 && top_p <= 1.0)) throw InputError("top_p must lie in (0, 1]");
    if (max_new_tokens < 1) throw InputError("max_new_tokens must be at least 1");
  }
};

struct Rollout {
  std::vector<TokenId> prompt;
  std::vector<TokenId> response;
  // Log-probabilities of the emitted tokens under the filtered sampling
  // distribution (temperature + nucleus).
  std::vector<double> old_logprobs;
  // Same tokens under the unfiltered, temperature-1 policy that sampled
  // them. This is the denominator of the importance ratio.
  std::vector<double> policy_logprobs;
  bool stopped = false;
  double reward = 0.0;
};

namespace detail {

inline void check_token(const PolicyParams& p, TokenId token) {
  if (token < 0 || static_cast<std::size_t>(token) >= p.arch().vocab)
    throw InputError("token id " + std::to_string(token) + " out of range");
}

// tanh rounds to exactly +-1 past |a| ~ 19; keep the state strictly inside.
inline const double kStateBound = std::nextafter(1.0, 0.0);

// h_out = tanh(W_x e(token) + W_h h_prev + b)
inline void recur(const PolicyParams& p, const double* h_prev, TokenId token, double* h_out) {
  const std::size_t H = p.arch().hidden, D = p.arch().embed;
  const double* e = p.embedding() + static_cast<std::size_t>(token) * D;
  const double* wx = p.w_x();
  const double* wh = p.w_h();
  const double* b = p.b();
  for (std::size_t i = 0; i < H; ++i) {
    double a = b[i];
    const double* wxi = wx + i * D;
    for (std::size_t j = 0; j < D; ++j) a += wxi[j] * e[j];
    const double* whi = wh + i * H;
    for (std::size_t j = 0; j < H; ++j) a += whi[j] * h_prev[j];
    h_out[i] = std::clamp(std::tanh(a), -kStateBound, kStateBound);
  }
}

inline void project(const PolicyParams& p, const double* h, double* logits) {
  const std::size_t H = p.arch().hidden, V = p.arch().vocab;
  const double* wo = p.w_o();
  const double* bo = p.b_o();
  for (std::size_t v = 0; v < V; ++v) {
    double z = bo[v];
    const double* wov = wo + v * H;
    for (std::size_t j = 0; j < H; ++j) z += wov[j] * h[j];
    logits[v] = z;
  }
}

// Fills logp with log softmax(logits / temperature).
inline void log_softmax(std::span<const double> logits, double temperature,
                        std::span<double> logp) {
  double mx = -INFINITY;
  for (double z : logits) mx = std::max(mx, z / temperature);
  double sum = 0.0;
  for (std::size_t v = 0; v < logits.size(); ++v) sum += std::exp(logits[v] / temperature - mx);
  const double lse = mx + std::log(sum);
  for (std::size_t v = 0; v < logits.size(); ++v) logp[v] = logits[v] / temperature - lse;
}

}  // namespace detail

struct StepOutput {
  std::vector<double> logits;
  std::vector<double> next_state;
};

inline StepOutput step_logits(const PolicyParams& params, std::span<const double> state,
                              TokenId token) {
  if (state.size() != params.arch().hidden) throw InputError("state size mismatch");
  detail::check_token(params, token);
  StepOutput out{std::vector<double>(params.arch().vocab), std::vector<double>(params.arch().hidden)};
  detail::recur(params, state.data(), token, out.next_state.data());
  detail::project(params, out.next_state.data(), out.logits.data());
  return out;
}

struct Nucleus {
  std::vector<TokenId> tokens;  // probability-descending, ties by lower id
  double mass = 0.0;            // total probability of the kept tokens
};

// Smallest probability-sorted prefix whose cumulative mass reaches top_p.
inline Nucleus nucleus(std::span<const double> probs, double top_p) {
  Nucleus n;
  n.tokens.resize(probs.size());
  std::iota(n.tokens.begin(), n.tokens.end(), 0);
  std::stable_sort(n.tokens.begin(), n.tokens.end(),
                   [&](TokenId a, TokenId b) { return probs[a] > probs[b]; });
  if (top_p >= 1.0) {
    for (TokenId t : n.tokens) n.mass += probs[t];
    return n;
  }
  std::size_t keep = 0;
  while (keep < n.tokens.size()) {
    n.mass += probs[n.tokens[keep++]];
    if (n.mass >= top_p) break;
  }
  n.tokens.resize(keep);
  return n;
}

// Renormalized nucleus distribution over the full vocabulary (zeros outside).
inline std::vector<double> nucleus_distribution(std::span<const double> probs, double top_p) {
  const Nucleus n = nucleus(probs, top_p);
  std::vector<double> out(probs.size(), 0.0);
  for (TokenId t : n.tokens) out[t] = probs[t] / n.mass;
  return out;
}

inline Rollout sample_sequence(const PolicyParams& params, const std::vector<TokenId>& prompt,
                               const SamplingConfig& cfg, Rng& rng, TokenId eos) {
  cfg.validate();
  if (prompt.empty()) throw InputError("prompt must be non-empty");
  const std::size_t H = params.arch().hidden, V = params.arch().vocab;
  std::vector<double> h(H, 0.0), h_next(H), logits(V), logp(V), logp1(V), probs(V);

  for (TokenId tok : prompt) {
    detail::check_token(params, tok);
    detail::recur(params, h.data(), tok, h_next.data());
    std::swap(h, h_next);
  }

  Rollout r;
  r.prompt = prompt;
  for (std::size_t step = 0; step < cfg.max_new_tokens; ++step) {
    detail::project(params, h.data(), logits.data());
    detail::log_softmax(logits, 1.0, logp1);
    if (cfg.temperature == 1.0) {
      logp = logp1;
    } else {
      detail::log_softmax(logits, cfg.temperature, logp);
    }
    for (std::size_t v = 0; v < V; ++v) probs[v] = std::exp(logp[v]);
    const Nucleus n = nucleus(probs, cfg.top_p);

    const double u = rng.uniform() * n.mass;
    double cum = 0.0;
    TokenId pick = n.tokens.front();
    for (TokenId t : n.tokens) {
      cum += probs[t];
      if (cum > u) {
        pick = t;
        break;
      }
    }
    r.response.push_back(pick);
    r.old_logprobs.push_back(std::min(0.0, logp[pick] - std::log(n.mass)));
    r.policy_logprobs.push_back(logp1[pick]);
    if (pick == eos) {
      r.stopped = true;
      break;
    }
    detail::recur(params, h.data(), pick, h_next.data());
    std::swap(h, h_next);
  }
  return r;
}

// Forward activations needed for backpropagation of one (prompt, response).
struct ForwardTrace {
  std::vector<TokenId> inputs;   // prompt ++ response[0 .. R-2]
  std::vector<double> hidden;    // (inputs.size() + 1) x H, row 0 is h0 = 0
  std::vector<double> probs;     // R x V, temperature-1 softmax per response slot
  std::vector<double> logprobs;  // R, log-probability of each response token
  std::vector<TokenId> response;
  std::size_t prompt_len = 0;
};

inline ForwardTrace forward(const PolicyParams& params, const std::vector<TokenId>& prompt,
                            const std::vector<TokenId>& response) {
  if (prompt.empty()) throw InputError("prompt must be non-empty");
  const std::size_t H = params.arch().hidden, V = params.arch().vocab;
  ForwardTrace tr;
  tr.prompt_len = prompt.size();
  tr.response = response;
  tr.inputs = prompt;
  if (!response.empty()) tr.inputs.insert(tr.inputs.end(), response.begin(), response.end() - 1);
  for (TokenId t : tr.inputs) detail::check_token(params, t);
  for (TokenId t : response) detail::check_token(params, t);

  tr.hidden.assign((tr.inputs.size() + 1) * H, 0.0);
  tr.probs.assign(response.size() * V, 0.0);
  tr.logprobs.assign(response.size(), 0.0);
  std::vector<double> logits(V), logp(V);
  for (std::size_t k = 0; k < tr.inputs.size(); ++k) {
    const double* h_prev = tr.hidden.data() + k * H;
    double* h = tr.hidden.data() + (k + 1) * H;
    detail::recur(params, h_prev, tr.inputs[k], h);
    if (k + 1 >= tr.prompt_len) {
      const std::size_t t = k + 1 - tr.prompt_len;
      detail::project(params, h, logits.data());
      detail::log_softmax(logits, 1.0, logp);
      double* pr = tr.probs.data() + t * V;
      for (std::size_t v = 0; v < V; ++v) pr[v] = std::exp(logp[v]);
      tr.logprobs[t] = logp[static_cast<std::size_t>(response[t])];
    }
  }
  return tr;
}

inline std::vector<double> sequence_logprobs(const PolicyParams& params,
                                             const std::vector<TokenId>& prompt,
                                             const std::vector<TokenId>& response) {
  return forward(params, prompt, response).logprobs;
}

// grad += sum_t weights[t] * d/dparams log pi(response[t] | prefix)
inline void backward(const PolicyParams& params, const ForwardTrace& tr,
                     std::span<const double> weights, Gradient& grad) {
  if (weights.size() != tr.response.size()) throw InputError("weights/response length mismatch");
  if (!(grad.arch() == params.arch())) throw InputError("gradient shape mismatch");
  if (std::all_of(weights.begin(), weights.end(), [](double w) { return w == 0.0; })) return;

  const std::size_t H = params.arch().hidden, D = params.arch().embed, V = params.arch().vocab;
  std::vector<double> carry(H, 0.0), dh(H), da(H), dlogit(V);
  const double* wo = params.w_o();
  const double* wx = params.w_x();
  const double* wh = params.w_h();
  const double* emb = params.embedding();
  double* g_emb = grad.embedding();
  double* g_wx = grad.w_x();
  double* g_wh = grad.w_h();
  double* g_b = grad.b();
  double* g_wo = grad.w_o();
  double* g_bo = grad.b_o();

  for (std::size_t k = tr.inputs.size(); k-- > 0;) {
    const double* h = tr.hidden.data() + (k + 1) * H;
    const double* h_prev = tr.hidden.data() + k * H;
    dh = carry;
    if (k + 1 >= tr.prompt_len) {
      const std::size_t t = k + 1 - tr.prompt_len;
      const double w = weights[t];
      if (w != 0.0) {
        const double* pr = tr.probs.data() + t * V;
        for (std::size_t v = 0; v < V; ++v) dlogit[v] = -w * pr[v];
        dlogit[static_cast<std::size_t>(tr.response[t])] += w;
        for (std::size_t v = 0; v < V; ++v) {
          const double g = dlogit[v];
          double* gwov = g_wo + v * H;
          const double* wov = wo + v * H;
          for (std::size_t j = 0; j < H; ++j) {
            gwov[j] += g * h[j];
            dh[j] += wov[j] * g;
          }
          g_bo[v] += g;
        }
      }
    }
    for (std::size_t i = 0; i < H; ++i) da[i] = dh[i] * (1.0 - h[i] * h[i]);

    const std::size_t x = static_cast<std::size_t>(tr.inputs[k]);
    const double* e = emb + x * D;
    double* ge = g_emb + x * D;
    std::fill(carry.begin(), carry.end(), 0.0);
    for (std::size_t i = 0; i < H; ++i) {
      const double a = da[i];
      if (a == 0.0) continue;
      double* gwxi = g_wx + i * D;
      const double* wxi = wx + i * D;
      for (std::size_t j = 0; j < D; ++j) {
        gwxi[j] += a * e[j];
        ge[j] += wxi[j] * a;
      }
      double* gwhi = g_wh + i * H;
      const double* whi = wh + i * H;
      for (std::size_t j = 0; j < H; ++j) {
        gwhi[j] += a * h_prev[j];
        carry[j] += whi[j] * a;
      }
      g_b[i] += a;
    }
  }
}

inline void accumulate_weighted_gradient(const PolicyParams& params,
                                         const std::vector<TokenId>& prompt,
                                         const std::vector<TokenId>& response,
                                         std::span<const double> weights, Gradient& grad) {
  if (weights.size() != response.size()) throw InputError("weights/response length mismatch");
  backward(params, forward(params, prompt, response), weights, grad);
}

inline Gradient accumulate_weighted_gradient(const PolicyParams& params,
                                             const std::vector<TokenId>& prompt,
                                             const std::vector<TokenId>& response,
                                             std::span<const double> weights) {
  Gradient g(params.arch());
  accumulate_weighted_gradient(params, prompt, response, weights, g);
  return g;
}

// Entropy of the temperature-1 next-token distribution at every response slot.
inline std::vector<double> token_entropies(const ForwardTrace& tr, std::size_t vocab) {
  std::vector<double> out(tr.response.size(), 0.0);
  for (std::size_t t = 0; t < out.size(); ++t) {
    const double* pr = tr.probs.data() + t * vocab;
    double h = 0.0;
    for (std::size_t v = 0; v < vocab; ++v)
      if (pr[v] > 0.0) h -= pr[v] * std::log(pr[v]);
    out[t] = h;
  }
  return out;
}

struct AdamState {
  PolicyParams m;
  PolicyParams v;
  std::uint64_t step = 0;

  AdamState() = default;
  explicit AdamState(Arch arch) : m(arch), v(arch) {}
  friend bool operator==(const AdamState&, const AdamState&) = default;
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

// In-place form; the parameters and moments are untouched when the gradient
// is rejected.
inline void adam_step(PolicyParams& params, const Gradient& grad, AdamState& opt, double lr) {
  if (!(grad.arch() == params.arch()) || !(opt.m.arch() == params.arch()))
    throw InputError("optimizer shape mismatch");
  if (!grad.all_finite()) throw NumericError("non-finite gradient entry; update rejected");
  const std::uint64_t step = opt.step + 1;
  const double c1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(step));
  auto p = params.flat();
  auto g = grad.flat();
  auto m = opt.m.flat();
  auto v = opt.v.flat();
  for (std::size_t i = 0; i < p.size(); ++i) {
    m[i] = kAdamBeta1 * m[i] + (1.0 - kAdamBeta1) * g[i];
    v[i] = kAdamBeta2 * v[i] + (1.0 - kAdamBeta2) * g[i] * g[i];
    const double mhat = m[i] / c1;
    const double vhat = v[i] / c2;
    p[i] -= lr * mhat / (std::sqrt(vhat) + kAdamEps);
  }
  opt.step = step;
}

struct AdamResult {
  PolicyParams params;
  AdamState state;
};

inline AdamResult adam_update(const PolicyParams& params, const Gradient& grad,
                              const AdamState& opt, double lr) {
  AdamResult r{params, opt};
  adam_step(r.params, grad, r.state, lr);
  return r;
}

}  // namespace zerorl
