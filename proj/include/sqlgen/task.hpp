#pragma once

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sqlgen/core.hpp"
#include "sqlgen/error.hpp"
#include "sqlgen/rewards.hpp"

namespace sqlgen {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

struct TaskSpec {
  Vocab vocab;
  std::size_t t_max = 1;
  RewardSpec reward_spec;
  std::optional<std::vector<Trajectory>> dataset;

  double reward(const Tokens& tokens) const { return sqlgen::reward(reward_spec, tokens, vocab); }

  /// Episode ends on eos or once t_max tokens have been emitted.
  bool ends_after(const Tokens& prefix, TokenId next) const {
    return vocab.is_eos(next) || prefix.size() + 1 >= t_max;
  }
};

/// Empty string when valid, otherwise a description of the first violation.
inline std::string validate_trajectory(const Trajectory& traj, const TaskSpec& task) {
  const Tokens& ids = traj.token_ids;
  if (ids.empty()) return "empty trajectory";
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (!task.vocab.contains(ids[i])) return "token id " + std::to_string(ids[i]) + " out of range";
    if (task.vocab.is_eos(ids[i]) && i + 1 != ids.size()) return "eos not final";
  }
  if (ids.size() > task.t_max) return "exceeds horizon";
  return {};
}

inline TaskSpec with_scale(TaskSpec task, double scale) {
  task.reward_spec.scale = scale;
  return task;
}

// ---------------------------------------------------------------- JSON I/O

namespace detail {

inline json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    fail(ErrorKind::schema, path.string() + ": " + e.what());
  }
}

inline Tokens tokens_from_json(const json& j, const Vocab& vocab, const std::string& where) {
  if (!j.is_array()) fail(ErrorKind::schema, where + ": expected an array of token strings");
  std::vector<std::string> text;
  for (const json& t : j) {
    if (!t.is_string()) fail(ErrorKind::schema, where + ": tokens must be strings");
    text.push_back(t.get<std::string>());
  }
  try {
    return encode(text, vocab);
  } catch (const Error& e) {
    fail(ErrorKind::schema, where + ": " + e.what());
  }
}

inline json tokens_to_json(const Tokens& ids, const Vocab& vocab) { return decode(ids, vocab); }

template <class T>
T get_field(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) fail(ErrorKind::schema, where + ": missing key '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    fail(ErrorKind::schema, where + ": wrong type for key '" + key + "'");
  }
}

}  // namespace detail

inline RewardComponent component_from_json(const json& j, const Vocab& vocab) {
  const std::string where = "reward component";
  const auto kind = detail::get_field<std::string>(j, "kind", where);
  RewardComponent c;
  if (kind == "exact_match" || kind == "substring_bonus") {
    c.kind = kind == "exact_match" ? RewardKind::exact_match : RewardKind::substring_bonus;
    c.target = detail::tokens_from_json(j.at("target"), vocab, where + " target");
  } else if (kind == "ngram_bleu") {
    c.kind = RewardKind::ngram_bleu;
    for (const json& r : j.at("references")) c.references.push_back(detail::tokens_from_json(r, vocab, where));
    if (c.references.empty()) fail(ErrorKind::schema, "ngram_bleu needs references");
    c.max_n = j.value("max_n", std::size_t{4});
    const std::string smoothing = j.value("smoothing", std::string("add_one"));
    if (smoothing != "add_one" && smoothing != "none") fail(ErrorKind::schema, "unknown smoothing " + smoothing);
    c.smoothing = smoothing == "none" ? BleuSmoothing::none : BleuSmoothing::add_one;
  } else if (kind == "repetition_penalty") {
    c.kind = RewardKind::repetition_penalty;
  } else if (kind == "length_window") {
    c.kind = RewardKind::length_window;
    c.min_len = detail::get_field<std::size_t>(j, "min", where);
    c.max_len = detail::get_field<std::size_t>(j, "max", where);
  } else if (kind == "lookup_table") {
    c.kind = RewardKind::lookup_table;
    for (const json& row : j.at("table")) {
      c.table[detail::tokens_from_json(row.at("tokens"), vocab, where)] =
          detail::get_field<double>(row, "reward", where);
    }
    if (j.contains("default")) c.table_default = j.at("default").get<double>();
  } else {
    fail(ErrorKind::schema, "unknown reward kind " + kind);
  }
  return c;
}

inline json component_to_json(const RewardComponent& c, const Vocab& vocab) {
  json j;
  switch (c.kind) {
    case RewardKind::exact_match:
      j = {{"kind", "exact_match"}, {"target", detail::tokens_to_json(c.target, vocab)}};
      break;
    case RewardKind::substring_bonus:
      j = {{"kind", "substring_bonus"}, {"target", detail::tokens_to_json(c.target, vocab)}};
      break;
    case RewardKind::ngram_bleu: {
      json refs = json::array();
      for (const Tokens& r : c.references) refs.push_back(detail::tokens_to_json(r, vocab));
      j = {{"kind", "ngram_bleu"},
           {"references", refs},
           {"max_n", c.max_n},
           {"smoothing", c.smoothing == BleuSmoothing::none ? "none" : "add_one"}};
      break;
    }
    case RewardKind::repetition_penalty:
      j = {{"kind", "repetition_penalty"}};
      break;
    case RewardKind::length_window:
      j = {{"kind", "length_window"}, {"min", c.min_len}, {"max", c.max_len}};
      break;
    case RewardKind::lookup_table: {
      json table = json::array();
      for (const auto& [seq, r] : c.table) table.push_back({{"tokens", detail::tokens_to_json(seq, vocab)}, {"reward", r}});
      j = {{"kind", "lookup_table"}, {"table", table}};
      if (c.table_default) j["default"] = *c.table_default;
      break;
    }
  }
  return j;
}

inline RewardSpec reward_spec_from_json(const json& j, const Vocab& vocab) {
  RewardSpec spec;
  spec.scale = j.value("scale", 1.0);
  if (!j.contains("components") || !j.at("components").is_array()) {
    fail(ErrorKind::schema, "reward: missing 'components' array");
  }
  for (const json& c : j.at("components")) {
    spec.components.push_back({component_from_json(c, vocab), c.value("weight", 1.0)});
  }
  try {
    spec.validate();
  } catch (const Error& e) {
    fail(ErrorKind::schema, e.what());
  }
  return spec;
}

inline json reward_spec_to_json(const RewardSpec& spec, const Vocab& vocab) {
  json comps = json::array();
  for (const WeightedComponent& wc : spec.components) {
    json c = component_to_json(wc.component, vocab);
    c["weight"] = wc.weight;
    comps.push_back(c);
  }
  return {{"scale", spec.scale}, {"components", comps}};
}

/// One trajectory per line: {"tokens": [...], "reward": optional}. A missing
/// reward is recomputed from the task's reward spec.
inline std::vector<Trajectory> parse_dataset_jsonl(std::istream& in, const TaskSpec& task) {
  std::vector<Trajectory> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "dataset line " + std::to_string(lineno);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      fail(ErrorKind::schema, where + ": " + e.what());
    }
    Trajectory t;
    t.token_ids = detail::tokens_from_json(j.at("tokens"), task.vocab, where);
    t.source = Source::off_policy;
    t.terminal_reward = j.contains("reward") && !j.at("reward").is_null() ? j.at("reward").get<double>()
                                                                           : task.reward(t.token_ids);
    if (const std::string v = validate_trajectory(t, task); !v.empty()) fail(ErrorKind::schema, where + ": " + v);
    out.push_back(std::move(t));
  }
  return out;
}

inline std::vector<Trajectory> load_dataset(const std::filesystem::path& path, const TaskSpec& task) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot open dataset " + path.string());
  return parse_dataset_jsonl(in, task);
}

inline std::string dataset_to_jsonl(const std::vector<Trajectory>& data, const Vocab& vocab) {
  std::ostringstream os;
  for (const Trajectory& t : data) {
    ordered_json j;
    j["tokens"] = detail::tokens_to_json(t.token_ids, vocab);
    j["reward"] = t.terminal_reward;
    os << j.dump() << '\n';
  }
  return os.str();
}

/// Task file: {"vocab": [...], "eos": "..." | null, "t_max": n, "reward": {...},
/// "dataset": "relative/path.jsonl" | [inline rows]}.
inline TaskSpec task_from_json(const json& j, const std::filesystem::path& base_dir = {}) {
  const std::string where = "task";
  TaskSpec task;
  const auto tokens = detail::get_field<std::vector<std::string>>(j, "vocab", where);
  std::optional<std::string> eos;
  if (j.contains("eos") && !j.at("eos").is_null()) eos = detail::get_field<std::string>(j, "eos", where);
  try {
    task.vocab = Vocab(tokens, eos);
  } catch (const Error& e) {
    fail(ErrorKind::schema, e.what());
  }
  const auto t_max = detail::get_field<long long>(j, "t_max", where);
  if (t_max < 1) fail(ErrorKind::schema, "task: t_max must be >= 1");
  task.t_max = static_cast<std::size_t>(t_max);
  if (!j.contains("reward")) fail(ErrorKind::schema, "task: missing key 'reward'");
  task.reward_spec = reward_spec_from_json(j.at("reward"), task.vocab);
  if (j.contains("dataset")) {
    const json& d = j.at("dataset");
    if (d.is_string()) {
      task.dataset = load_dataset(base_dir / d.get<std::string>(), task);
    } else if (d.is_array()) {
      std::ostringstream lines;
      for (const json& row : d) lines << row.dump() << '\n';
      std::istringstream in(lines.str());
      task.dataset = parse_dataset_jsonl(in, task);
    } else {
      fail(ErrorKind::schema, "task: 'dataset' must be a path or an array");
    }
  }
  return task;
}

inline TaskSpec load_task(const std::filesystem::path& path) {
  return task_from_json(detail::read_json_file(path), path.parent_path());
}

inline json task_to_json(const TaskSpec& task) {
  json j;
  j["vocab"] = task.vocab.tokens();
  j["eos"] = task.vocab.eos_id() ? json(task.vocab.token(*task.vocab.eos_id())) : json(nullptr);
  j["t_max"] = task.t_max;
  j["reward"] = reward_spec_to_json(task.reward_spec, task.vocab);
  if (task.dataset) {
    json rows = json::array();
    for (const Trajectory& t : *task.dataset) {
      rows.push_back({{"tokens", detail::tokens_to_json(t.token_ids, task.vocab)}, {"reward", t.terminal_reward}});
    }
    j["dataset"] = rows;
  }
  return j;
}

}  // namespace sqlgen
