#pragma once

// Training configuration: JSON schema with documented defaults, strict key
// checking, and `key=value` overrides (dotted keys reach nested objects).

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "sqlgen/error.hpp"
#include "sqlgen/objectives.hpp"
#include "sqlgen/optim.hpp"
#include "sqlgen/qmodel.hpp"

namespace sqlgen {

struct TrainConfig {
  double gamma = 1.0;
  double reward_scale = 1.0;  // multiplies the task's own reward scale
  double lr = 1e-3;
  long long steps = 1000;
  long long batch_off = 0;
  long long batch_on = 16;
  long long warmup_steps = 0;  // off-policy-only steps before rollouts start
  double rho = 0.999;
  LossWeights weights;
  std::uint64_t seed = 0;
  long long eval_every = 100;
  OptimizerKind optimizer = OptimizerKind::adam;
  ModelConfig model;
  bool pg_baseline = true;
  double baseline_decay = 0.95;
  double temperature = 1.0;  // rollout temperature
  long long eval_samples = 200;
  double eval_p = 1.0;
  long long threads = 1;
  double oracle_cap = 1e5;  // evaluate against the oracle when |V|^t_max is at most this
  bool checkpoints = true;

  void validate() const {
    auto check = [](bool ok, const std::string& msg) {
      if (!ok) fail(ErrorKind::schema, msg);
    };
    check(gamma > 0.0 && gamma <= 1.0, "gamma must be in (0, 1]");
    check(reward_scale > 0.0, "reward_scale must be > 0");
    check(lr >= 0.0, "lr must be >= 0");
    check(steps >= 0, "steps must be >= 0");
    check(batch_off >= 0 && batch_on >= 0 && batch_off + batch_on >= 1, "batch_off + batch_on must be >= 1");
    check(warmup_steps >= 0, "warmup_steps must be >= 0");
    check(warmup_steps == 0 || batch_off >= 1, "warmup needs batch_off >= 1");
    check(rho >= 0.0 && rho <= 1.0, "rho must be in [0, 1]");
    check(weights[LossKind::pg] == 0.0 || batch_on >= 1, "pg weight > 0 needs batch_on >= 1");
    check(eval_every >= 1, "eval_every must be >= 1");
    check(baseline_decay >= 0.0 && baseline_decay < 1.0, "baseline_decay must be in [0, 1)");
    check(temperature > 0.0, "temperature must be > 0");
    check(eval_samples >= 1, "eval_samples must be >= 1");
    check(eval_p > 0.0 && eval_p <= 1.0, "eval_p must be in (0, 1]");
    check(threads >= 1, "threads must be >= 1");
    try {
      weights.validate();
    } catch (const Error& e) {
      fail(ErrorKind::schema, e.what());
    }
  }
};

inline nlohmann::ordered_json to_json(const TrainConfig& c) {
  nlohmann::ordered_json w;
  for (LossKind k : kAllLosses) w[to_string(k)] = c.weights[k];
  const nlohmann::json model = to_json(c.model);
  nlohmann::ordered_json m;
  for (const auto& [k, v] : model.items()) m[k] = v;
  nlohmann::ordered_json j;
  j["gamma"] = c.gamma;
  j["reward_scale"] = c.reward_scale;
  j["lr"] = c.lr;
  j["steps"] = c.steps;
  j["batch_off"] = c.batch_off;
  j["batch_on"] = c.batch_on;
  j["warmup_steps"] = c.warmup_steps;
  j["rho"] = c.rho;
  j["weights"] = w;
  j["seed"] = c.seed;
  j["eval_every"] = c.eval_every;
  j["optimizer"] = to_string(c.optimizer);
  j["model"] = m;
  j["pg_baseline"] = c.pg_baseline;
  j["baseline_decay"] = c.baseline_decay;
  j["temperature"] = c.temperature;
  j["eval_samples"] = c.eval_samples;
  j["eval_p"] = c.eval_p;
  j["threads"] = c.threads;
  j["oracle_cap"] = c.oracle_cap;
  j["checkpoints"] = c.checkpoints;
  return j;
}

namespace detail {

inline bool same_kind(const nlohmann::json& expected, const nlohmann::json& got) {
  if (expected.is_number()) {
    if (!got.is_number()) return false;
    // integers stay integers; floats accept any number
    return expected.is_number_float() || got.is_number_integer();
  }
  return expected.type() == got.type();
}

// Copies `src` into `dst`, rejecting keys or types absent from `dst`.
inline void merge_checked(nlohmann::json& dst, const nlohmann::json& src, const std::string& prefix) {
  if (!src.is_object()) fail(ErrorKind::schema, "config" + (prefix.empty() ? "" : " key " + prefix) + " must be an object");
  for (const auto& [key, value] : src.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!dst.contains(key)) fail(ErrorKind::schema, "unknown config key '" + path + "'");
    nlohmann::json& slot = dst[key];
    if (slot.is_object()) {
      merge_checked(slot, value, path);
    } else if (!same_kind(slot, value)) {
      fail(ErrorKind::schema, "type mismatch for config key '" + path + "'");
    } else {
      slot = value;
    }
  }
}

}  // namespace detail

inline TrainConfig config_from_json(const nlohmann::json& resolved) {
  TrainConfig c;
  c.gamma = resolved.at("gamma").get<double>();
  c.reward_scale = resolved.at("reward_scale").get<double>();
  c.lr = resolved.at("lr").get<double>();
  c.steps = resolved.at("steps").get<long long>();
  c.batch_off = resolved.at("batch_off").get<long long>();
  c.batch_on = resolved.at("batch_on").get<long long>();
  c.warmup_steps = resolved.at("warmup_steps").get<long long>();
  c.rho = resolved.at("rho").get<double>();
  for (LossKind k : kAllLosses) c.weights[k] = resolved.at("weights").at(to_string(k)).get<double>();
  c.seed = resolved.at("seed").get<std::uint64_t>();
  c.eval_every = resolved.at("eval_every").get<long long>();
  const std::string opt = resolved.at("optimizer").get<std::string>();
  if (opt != "sgd" && opt != "adam") fail(ErrorKind::schema, "optimizer must be 'sgd' or 'adam'");
  c.optimizer = opt == "sgd" ? OptimizerKind::sgd : OptimizerKind::adam;
  c.model = model_config_from_json(resolved.at("model"));
  c.pg_baseline = resolved.at("pg_baseline").get<bool>();
  c.baseline_decay = resolved.at("baseline_decay").get<double>();
  c.temperature = resolved.at("temperature").get<double>();
  c.eval_samples = resolved.at("eval_samples").get<long long>();
  c.eval_p = resolved.at("eval_p").get<double>();
  c.threads = resolved.at("threads").get<long long>();
  c.oracle_cap = resolved.at("oracle_cap").get<double>();
  c.checkpoints = resolved.at("checkpoints").get<bool>();
  c.validate();
  return c;
}

/// Parses the right-hand side of an override: JSON when it parses, else a string.
inline nlohmann::json parse_override_value(const std::string& text) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error&) {
    return text;
  }
}

/// Defaults, then the file's values, then overrides; each layer is checked
/// against the schema.
inline TrainConfig config_resolve(const nlohmann::json& file, const std::vector<std::string>& overrides = {}) {
  nlohmann::json resolved = nlohmann::json(to_json(TrainConfig{}));
  detail::merge_checked(resolved, file, "");
  for (const std::string& ov : overrides) {
    const auto eq = ov.find('=');
    if (eq == std::string::npos || eq == 0) fail(ErrorKind::schema, "override '" + ov + "' is not key=value");
    const std::string key = ov.substr(0, eq);
    nlohmann::json patch = parse_override_value(ov.substr(eq + 1));
    std::string rest = key;
    std::vector<std::string> parts;
    for (std::size_t pos; (pos = rest.find('.')) != std::string::npos; rest = rest.substr(pos + 1)) {
      parts.push_back(rest.substr(0, pos));
    }
    parts.push_back(rest);
    for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = nlohmann::json{{*it, patch}};
    detail::merge_checked(resolved, patch, "");
  }
  return config_from_json(resolved);
}

}  // namespace sqlgen
