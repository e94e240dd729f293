#pragma once

// Run configuration: a flat JSON object, schema-checked with unknown-key
// rejection. Values come from exactly one source each, with precedence
// flag > file > default.

#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "zerorl/errors.hpp"
#include "zerorl/grpo.hpp"
#include "zerorl/sft.hpp"

namespace zerorl {

struct RunConfig {
  TrainConfig train;
  double init_range = kDefaultInitRange;
  std::string out_dir = "run";
  std::string dataset_path;
  std::string init_checkpoint;
  std::string log_path;  // empty: <out_dir>/log.jsonl
  std::size_t sft_steps = 500;
  std::size_t sft_batch = 32;
  double sft_lr = 1e-3;
  std::size_t sft_demos = 1000;
  std::vector<std::size_t> sft_checkpoints{100, 500};

  std::string resolved_log_path() const {
    return log_path.empty() ? out_dir + "/log.jsonl" : log_path;
  }

  void validate() const {
    train.validate();
    if (!(init_range > 0.0)) throw ConfigError("init_range", "must be positive");
    if (out_dir.empty()) throw ConfigError("out_dir", "must be non-empty");
    if (sft_batch < 1) throw ConfigError("sft_batch", "must be at least 1");
    if (!(sft_lr > 0.0)) throw ConfigError("sft_lr", "must be positive");
    if (sft_demos < 1) throw ConfigError("sft_demos", "must be at least 1");
  }
};

enum class ConfigSource { default_value, file, flag };

inline std::string_view to_string(ConfigSource s) {
  switch (s) {
    case ConfigSource::default_value: return "default";
    case ConfigSource::file: return "file";
    case ConfigSource::flag: return "flag";
  }
  return "?";
}

namespace detail {

struct ConfigKey {
  const char* name;
  std::function<nlohmann::json(const RunConfig&)> get;
  std::function<void(RunConfig&, const nlohmann::json&)> set;
};

template <typename T>
T expect(const nlohmann::json& v, const char* key) {
  if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
    if (!v.is_number_integer() || v.get<std::int64_t>() < 0)
      throw ConfigError(key, "expected a non-negative integer");
    return v.get<T>();
  } else if constexpr (std::is_same_v<T, double>) {
    if (!v.is_number()) throw ConfigError(key, "expected a number");
    return v.get<double>();
  } else {
    if (!v.is_string()) throw ConfigError(key, "expected a string");
    return v.get<std::string>();
  }
}

#define ZERORL_KEY(name, field, type)                                                 \
  ConfigKey {                                                                         \
    name, [](const RunConfig& c) { return nlohmann::json(c.field); },                 \
        [](RunConfig& c, const nlohmann::json& v) { c.field = expect<type>(v, name); } \
  }

#define ZERORL_ENUM_KEY(name, field, parse)                                            \
  ConfigKey {                                                                          \
    name, [](const RunConfig& c) { return nlohmann::json(std::string(to_string(c.field))); }, \
        [](RunConfig& c, const nlohmann::json& v) {                                    \
          auto parsed = parse(expect<std::string>(v, name));                           \
          if (!parsed) throw ConfigError(name, "unknown value " + v.dump());           \
          c.field = *parsed;                                                           \
        }                                                                              \
  }

inline const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys{
      ZERORL_KEY("group_size", train.group_size, std::size_t),
      ZERORL_KEY("prompt_batch", train.prompt_batch, std::size_t),
      ZERORL_KEY("mini_batch", train.mini_batch, std::size_t),
      ZERORL_KEY("clip_epsilon", train.clip_epsilon, double),
      ZERORL_KEY("kl_coef", train.kl_coef, double),
      ZERORL_KEY("lr", train.lr, double),
      ZERORL_KEY("temperature", train.temperature, double),
      ZERORL_KEY("top_p", train.top_p, double),
      ZERORL_KEY("max_new_tokens", train.max_new_tokens, std::size_t),
      ZERORL_ENUM_KEY("tier", train.tier, parse_tier),
      ZERORL_ENUM_KEY("prompt_style", train.prompt_style, parse_prompt_style),
      ZERORL_ENUM_KEY("reward_mode", train.reward_mode, parse_reward_mode),
      ZERORL_KEY("iterations", train.iterations, std::size_t),
      ZERORL_KEY("eval_every", train.eval_every, std::size_t),
      ZERORL_KEY("eval_samples", train.eval_samples, std::size_t),
      ZERORL_KEY("eval_tasks", train.eval_tasks, std::size_t),
      ZERORL_KEY("eval_temperature", train.eval_temperature, double),
      ZERORL_KEY("eval_top_p", train.eval_top_p, double),
      ZERORL_KEY("seed", train.seed, std::uint64_t),
      ZERORL_KEY("embed_dim", train.embed_dim, std::size_t),
      ZERORL_KEY("hidden_dim", train.hidden_dim, std::size_t),
      ZERORL_KEY("init_range", init_range, double),
      ZERORL_KEY("out_dir", out_dir, std::string),
      ZERORL_KEY("dataset_path", dataset_path, std::string),
      ZERORL_KEY("init_checkpoint", init_checkpoint, std::string),
      ZERORL_KEY("log_path", log_path, std::string),
      ZERORL_KEY("sft_steps", sft_steps, std::size_t),
      ZERORL_KEY("sft_batch", sft_batch, std::size_t),
      ZERORL_KEY("sft_lr", sft_lr, double),
      ZERORL_KEY("sft_demos", sft_demos, std::size_t),
      ConfigKey{"sft_checkpoints",
                [](const RunConfig& c) { return nlohmann::json(c.sft_checkpoints); },
                [](RunConfig& c, const nlohmann::json& v) {
                  if (!v.is_array()) throw ConfigError("sft_checkpoints", "expected an array");
                  c.sft_checkpoints.clear();
                  for (const auto& x : v)
                    c.sft_checkpoints.push_back(expect<std::size_t>(x, "sft_checkpoints"));
                }},
  };
  return keys;
}

#undef ZERORL_KEY
#undef ZERORL_ENUM_KEY

inline const ConfigKey& find_key(const std::string& name) {
  for (const auto& k : config_keys())
    if (name == k.name) return k;
  throw ConfigError(name, "unknown configuration key");
}

}  // namespace detail

class ResolvedConfig {
 public:
  ResolvedConfig() {
    for (const auto& k : detail::config_keys()) sources_[k.name] = ConfigSource::default_value;
  }

  const RunConfig& config() const { return cfg_; }
  ConfigSource source(const std::string& key) const { return sources_.at(key); }

  // Applies a whole file object. Later flag overrides still win.
  void apply_file_object(const nlohmann::json& obj) {
    if (!obj.is_object()) throw ConfigError("<root>", "configuration must be a JSON object");
    for (const auto& [key, value] : obj.items()) set(key, value, ConfigSource::file);
  }

  void apply_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(ss.str());
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(e.byte, std::string("config '") + path + "': " + e.what());
    }
    apply_file_object(obj);
  }

  void set(const std::string& key, const nlohmann::json& value, ConfigSource source) {
    const auto& k = detail::find_key(key);
    if (sources_.at(key) == ConfigSource::flag && source != ConfigSource::flag) return;
    k.set(cfg_, value);
    sources_[key] = source;
  }

  // {key: {"value": ..., "source": ...}} in schema order.
  nlohmann::ordered_json echo() const {
    nlohmann::ordered_json out;
    for (const auto& k : detail::config_keys())
      out[k.name] = {{"value", k.get(cfg_)},
                     {"source", std::string(to_string(sources_.at(k.name)))}};
    return out;
  }

  // Flat {key: value} form that apply_file_object accepts.
  nlohmann::ordered_json values() const {
    nlohmann::ordered_json out;
    for (const auto& k : detail::config_keys()) out[k.name] = k.get(cfg_);
    return out;
  }

 private:
  RunConfig cfg_;
  std::map<std::string, ConfigSource> sources_;
};

}  // namespace zerorl
