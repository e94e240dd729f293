#pragma once

// Checkpoint persistence. JSON with every double written in shortest
// round-trip form, so load(save(x)) is bit-exact.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "zerorl/errors.hpp"
#include "zerorl/policy.hpp"
#include "zerorl/rng.hpp"
#include "zerorl/vocab.hpp"

namespace zerorl {

inline constexpr int kCheckpointSchemaVersion = 1;

struct Checkpoint {
  std::vector<std::string> vocab;
  PolicyParams params;
  AdamState adam;
  std::string rng_state;
  std::int64_t iter = 0;
  std::string provenance = "base";  // base | sft_stepN | rl

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

namespace detail {

inline nlohmann::ordered_json flat_array(std::span<const double> xs) {
  nlohmann::ordered_json a = nlohmann::ordered_json::array();
  for (double x : xs) {
    if (!std::isfinite(x)) throw NumericError("refusing to save a non-finite value");
    a.push_back(x);
  }
  return a;
}

inline void read_array(const nlohmann::json& a, std::span<double> out, const char* what) {
  if (!a.is_array() || a.size() != out.size())
    throw ParseError(0, std::string("checkpoint field '") + what + "' has the wrong length");
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!a[i].is_number())
      throw ParseError(0, std::string("checkpoint field '") + what + "' holds a non-number");
    out[i] = a[i].get<double>();
  }
}

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& c) {
  nlohmann::ordered_json j;
  j["schema_version"] = kCheckpointSchemaVersion;
  j["provenance"] = c.provenance;
  j["iter"] = c.iter;
  j["vocab"] = c.vocab;
  const Arch& a = c.params.arch();
  j["arch"] = {{"embed", a.embed}, {"hidden", a.hidden}, {"vocab", a.vocab}};
  j["params"] = detail::flat_array(c.params.flat());
  j["adam"] = {{"step", c.adam.step},
               {"m", detail::flat_array(c.adam.m.flat())},
               {"v", detail::flat_array(c.adam.v.flat())}};
  j["rng_state"] = c.rng_state;
  return j.dump() + "\n";
}

inline Checkpoint parse_checkpoint(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(e.byte, e.what());
  }
  if (!j.is_object() || !j.contains("schema_version"))
    throw ParseError(0, "checkpoint lacks schema_version");
  if (!j["schema_version"].is_number_integer() ||
      j["schema_version"].get<int>() != kCheckpointSchemaVersion)
    throw VersionError("checkpoint schema_version " + j["schema_version"].dump() +
                       " is not supported (expected " +
                       std::to_string(kCheckpointSchemaVersion) + ")");
  try {
    Checkpoint c;
    c.provenance = j.at("provenance").get<std::string>();
    c.iter = j.at("iter").get<std::int64_t>();
    c.vocab = j.at("vocab").get<std::vector<std::string>>();
    const auto& a = j.at("arch");
    const Arch arch{a.at("embed").get<std::size_t>(), a.at("hidden").get<std::size_t>(),
                    a.at("vocab").get<std::size_t>()};
    if (arch.vocab != c.vocab.size()) throw ParseError(0, "arch.vocab disagrees with vocab list");
    c.params = PolicyParams(arch);
    detail::read_array(j.at("params"), c.params.flat(), "params");
    c.adam = AdamState(arch);
    c.adam.step = j.at("adam").at("step").get<std::uint64_t>();
    detail::read_array(j.at("adam").at("m"), c.adam.m.flat(), "adam.m");
    detail::read_array(j.at("adam").at("v"), c.adam.v.flat(), "adam.v");
    c.rng_state = j.at("rng_state").get<std::string>();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(0, std::string("malformed checkpoint: ") + e.what());
  } catch (const InputError& e) {
    throw ParseError(0, std::string("malformed checkpoint: ") + e.what());
  }
}

// Written to a sibling temp file and renamed into place, so an interrupted
// save leaves the previous checkpoint intact.
inline void save_checkpoint(const std::string& path, const Checkpoint& c) {
  const std::string text = serialize_checkpoint(c);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint '" + tmp + "'");
    out << text;
    out.flush();
    if (!out) throw IoError("short write to checkpoint '" + tmp + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place: " + ec.message());
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_checkpoint(ss.str());
}

}  // namespace zerorl
