#pragma once

#include <string>
#include <vector>

#include "sqlgen/sqlgen.hpp"

namespace sqlgen::testing {

inline std::string task_path(const std::string& name) { return std::string(SQLGEN_TASK_DIR) + "/" + name; }

inline RewardComponent exact(Tokens target) {
  RewardComponent c;
  c.kind = RewardKind::exact_match;
  c.target = std::move(target);
  return c;
}

inline RewardComponent repetition() {
  RewardComponent c;
  c.kind = RewardKind::repetition_penalty;
  return c;
}

/// vocab {a,b}, no eos, horizon 2, reward 1 iff "ab".
inline TaskSpec ab_task(double scale = 1.0) {
  TaskSpec t;
  t.vocab = Vocab({"a", "b"});
  t.t_max = 2;
  t.reward_spec.components.push_back({exact({0, 1}), 1.0});
  t.reward_spec.scale = scale;
  return t;
}

/// vocab {a,b,<eos>} with the given horizon and exact-match target.
inline TaskSpec eos_task(std::size_t t_max, Tokens target = {0, 1}) {
  TaskSpec t;
  t.vocab = Vocab({"a", "b", "<eos>"}, std::string("<eos>"));
  t.t_max = t_max;
  t.reward_spec.components.push_back({exact(std::move(target)), 1.0});
  return t;
}

inline ModelConfig small_model(Arch arch = Arch::recurrent_cell, double init_range = 0.5) {
  ModelConfig mc;
  mc.arch = arch;
  mc.embed_dim = 3;
  mc.hidden_dim = 4;
  mc.window = 2;
  mc.init_range = init_range;
  return mc;
}

/// Parameters whose every Q-row equals `row` (all weights zero, head bias = row).
inline ParamVector constant_rows(const QModel& model, const std::vector<double>& row) {
  ParamVector p = model.zeros();
  auto b = p["head.b"];
  for (std::size_t i = 0; i < row.size(); ++i) b[i] = row[i];
  return p;
}

inline Trajectory traj(Tokens ids, double r) { return Trajectory{std::move(ids), r, Source::off_policy}; }

}  // namespace sqlgen::testing
