#pragma once

// Exact ground truth for tiny tasks. Every non-terminal prefix is enumerated
// and the soft Bellman recursion
//   Q*(s, a) = r(s, a) + gamma * V*(s + a),   V*(s) = logsumexp_a Q*(s, a),
// is solved backwards from the horizon, with V* = 0 past a terminal step.

#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "sqlgen/core.hpp"
#include "sqlgen/error.hpp"
#include "sqlgen/numeric.hpp"
#include "sqlgen/qmodel.hpp"
#include "sqlgen/task.hpp"

namespace sqlgen {

inline constexpr double kDefaultEnumerationCap = 1e6;

struct OracleState {
  Row q;
  double v = 0.0;
  std::vector<double> pi;
};

struct OracleTables {
  std::map<Tokens, OracleState> states;  // keyed by the exact prefix
  double gamma = 1.0;
  double scale = 1.0;

  const OracleState& at(const Tokens& prefix) const {
    auto it = states.find(prefix);
    require(it != states.end(), "prefix is not a state of the oracle task");
    return it->second;
  }
};

inline void check_enumerable(const TaskSpec& task, double cap) {
  const double count = std::pow(static_cast<double>(task.vocab.size()), static_cast<double>(task.t_max));
  if (count > cap) {
    fail(ErrorKind::invalid_argument,
         "task has " + std::to_string(static_cast<long double>(count)) + " sequences, above the enumeration cap");
  }
}

/// Non-terminal prefixes in order of increasing length (lexicographic within a length).
inline std::vector<Tokens> enumerate_prefixes(const TaskSpec& task) {
  std::vector<Tokens> out{Tokens{}};
  for (std::size_t i = 0; i < out.size(); ++i) {
    const Tokens s = out[i];
    for (std::size_t a = 0; a < task.vocab.size(); ++a) {
      if (task.ends_after(s, static_cast<TokenId>(a))) continue;
      Tokens next = s;
      next.push_back(static_cast<TokenId>(a));
      out.push_back(std::move(next));
    }
  }
  return out;
}

inline OracleTables soft_value_iteration(const TaskSpec& task, double gamma, double scale,
                                         double cap = kDefaultEnumerationCap) {
  require(gamma > 0.0 && gamma <= 1.0, "gamma must be in (0, 1]");
  require(scale > 0.0, "scale must be > 0");
  check_enumerable(task, cap);
  const TaskSpec scaled = with_scale(task, scale);
  OracleTables tables;
  tables.gamma = gamma;
  tables.scale = scale;
  const std::vector<Tokens> prefixes = enumerate_prefixes(task);
  for (std::size_t i = prefixes.size(); i-- > 0;) {
    const Tokens& s = prefixes[i];
    OracleState st;
    st.q.resize(task.vocab.size());
    for (std::size_t a = 0; a < task.vocab.size(); ++a) {
      Tokens next = s;
      next.push_back(static_cast<TokenId>(a));
      st.q[a] = task.ends_after(s, static_cast<TokenId>(a)) ? scaled.reward(next)
                                                            : gamma * tables.states.at(next).v;
    }
    st.v = state_value(st.q);
    st.pi = policy_from_q(st.q);
    tables.states.emplace(s, std::move(st));
  }
  return tables;
}

using PolicyFn = std::function<std::vector<double>(const Tokens&)>;

inline PolicyFn oracle_policy(const OracleTables& tables) {
  return [&tables](const Tokens& s) { return tables.at(s).pi; };
}

inline PolicyFn model_policy(const QModel& model, const ParamVector& params) {
  return [&model, &params](const Tokens& s) { return policy_from_q(model.q_row(params, s)); };
}

struct PolicyReturn {
  double expected_reward = 0.0;
  double soft_return = 0.0;  // discounted reward plus discounted per-step entropy
};

/// Exact expectations by full enumeration, using the task's own reward scale.
inline PolicyReturn exact_policy_return(const TaskSpec& task, const PolicyFn& policy, double gamma,
                                        double cap = kDefaultEnumerationCap) {
  require(gamma > 0.0 && gamma <= 1.0, "gamma must be in (0, 1]");
  check_enumerable(task, cap);
  std::function<PolicyReturn(const Tokens&)> visit = [&](const Tokens& s) {
    const std::vector<double> pi = policy(s);
    require(pi.size() == task.vocab.size(), "policy returned a distribution of the wrong size");
    PolicyReturn out;
    for (std::size_t a = 0; a < pi.size(); ++a) {
      if (pi[a] <= 0.0) continue;
      Tokens next = s;
      next.push_back(static_cast<TokenId>(a));
      PolicyReturn tail;
      if (task.ends_after(s, static_cast<TokenId>(a))) {
        tail.expected_reward = task.reward(next);
        tail.soft_return = tail.expected_reward;
      } else {
        tail = visit(next);
        tail.expected_reward *= gamma;
        tail.soft_return *= gamma;
      }
      out.expected_reward += pi[a] * tail.expected_reward;
      out.soft_return += pi[a] * (tail.soft_return - std::log(pi[a]));
    }
    return out;
  };
  return visit(Tokens{});
}

/// Probability that `policy` visits each non-terminal prefix.
inline std::map<Tokens, double> reach_probabilities(const TaskSpec& task, const PolicyFn& policy) {
  std::map<Tokens, double> reach;
  for (const Tokens& s : enumerate_prefixes(task)) {
    const double ps = s.empty() ? 1.0 : reach[s];
    if (s.empty()) reach[s] = 1.0;
    if (ps == 0.0) continue;
    const std::vector<double> pi = policy(s);
    for (std::size_t a = 0; a < pi.size(); ++a) {
      if (task.ends_after(s, static_cast<TokenId>(a))) continue;
      Tokens next = s;
      next.push_back(static_cast<TokenId>(a));
      reach[next] += ps * pi[a];
    }
  }
  return reach;
}

inline double tv_distance(std::span<const double> p, std::span<const double> q) {
  require(p.size() == q.size(), "tv_distance: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
  return 0.5 * s;
}

/// Worst-case policy and value gaps between a model and the oracle over the
/// prefixes the oracle policy reaches with probability >= min_reach.
struct OracleGap {
  double max_tv = 0.0;
  double max_value_gap = 0.0;
  std::size_t states_checked = 0;
};

inline OracleGap oracle_gap(const TaskSpec& task, const OracleTables& tables, const QModel& model,
                            const ParamVector& params, double min_reach = 0.01) {
  OracleGap gap;
  for (const auto& [prefix, prob] : reach_probabilities(task, oracle_policy(tables))) {
    if (prob < min_reach) continue;
    const Row q = model.q_row(params, prefix);
    const OracleState& st = tables.at(prefix);
    gap.max_tv = std::max(gap.max_tv, tv_distance(policy_from_q(q), st.pi));
    gap.max_value_gap = std::max(gap.max_value_gap, std::abs(state_value(q) - st.v));
    ++gap.states_checked;
  }
  return gap;
}

inline nlohmann::ordered_json oracle_to_json(const OracleTables& tables, const Vocab& vocab) {
  nlohmann::ordered_json j;
  j["gamma"] = tables.gamma;
  j["scale"] = tables.scale;
  nlohmann::ordered_json states = nlohmann::ordered_json::array();
  for (const auto& [prefix, st] : tables.states) {
    nlohmann::ordered_json row;
    row["prefix"] = decode(prefix, vocab);
    row["q"] = st.q;
    row["v"] = st.v;
    row["pi"] = st.pi;
    states.push_back(row);
  }
  j["states"] = states;
  return j;
}

}  // namespace sqlgen
