#pragma once

// Training losses over batches of complete episodes. Step t of an episode of
// length L (T = L - 1) is the state s_t = tokens[0:t] with action tokens[t];
// the reward arrives only at t = T and the value past the terminal step is 0.
// Target-network quantities are plain doubles, so gradients flow only through
// the live rows.
//
// Every loss is a sum of per-episode contributions divided by a count:
// valid positions for the step-wise losses, episodes for policy gradient.

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "sqlgen/autodiff.hpp"
#include "sqlgen/core.hpp"
#include "sqlgen/error.hpp"
#include "sqlgen/numeric.hpp"
#include "sqlgen/qmodel.hpp"

namespace sqlgen {

enum class LossKind : std::size_t { pcl_single, pcl_multi, mle, pg, q_hard, sql_vanilla };
inline constexpr std::size_t kLossKinds = 6;
inline constexpr std::array<LossKind, kLossKinds> kAllLosses{LossKind::pcl_single, LossKind::pcl_multi, LossKind::mle,
                                                             LossKind::pg,         LossKind::q_hard,    LossKind::sql_vanilla};

inline std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::pcl_single: return "pcl_single";
    case LossKind::pcl_multi: return "pcl_multi";
    case LossKind::mle: return "mle";
    case LossKind::pg: return "pg";
    case LossKind::q_hard: return "q_hard";
    case LossKind::sql_vanilla: return "sql_vanilla";
  }
  return "unknown";
}

inline bool needs_target(LossKind k) { return k != LossKind::mle && k != LossKind::pg; }

struct LossWeights {
  // Both path-consistency terms, plus the soft Bellman term: the consistency
  // residuals only see differences of values, so on their own they leave the
  // level of each Q-row free and V_theta never matches the soft value.
  std::array<double, kLossKinds> w{1.0, 1.0, 0.0, 0.0, 0.0, 1.0};

  double& operator[](LossKind k) { return w[static_cast<std::size_t>(k)]; }
  double operator[](LossKind k) const { return w[static_cast<std::size_t>(k)]; }

  static LossWeights only(LossKind k, double weight = 1.0) {
    LossWeights lw;
    lw.w.fill(0.0);
    lw[k] = weight;
    return lw;
  }

  void validate() const {
    bool any = false;
    for (double x : w) {
      require(x >= 0.0 && std::isfinite(x), "loss weights must be finite and >= 0");
      any = any || x > 0.0;
    }
    require(any, "at least one loss weight must be > 0");
  }
};

inline void check_gamma(double gamma) { require(gamma > 0.0 && gamma <= 1.0, "gamma must be in (0, 1]"); }

/// Discounted return from each step: gamma^(T-t) * r_T under sparse reward.
inline std::vector<double> reward_to_go(const Trajectory& traj, double gamma) {
  const std::size_t n = traj.token_ids.size();
  std::vector<double> out(n, 0.0);
  double g = traj.terminal_reward;
  for (std::size_t t = n; t-- > 0;) {
    out[t] = g;
    g *= gamma;
  }
  return out;
}

/// One episode with its live rows (scalar S) and, when needed, target rows.
template <class S>
struct EpisodeRows {
  std::span<const TokenId> tokens;
  double reward = 0.0;
  const std::vector<std::vector<S>>* live = nullptr;
  const std::vector<Row>* target = nullptr;

  std::size_t length() const { return tokens.size(); }
  S log_pi(std::size_t t) const {
    return log_softmax_at((*live)[t], static_cast<std::size_t>(tokens[t]));
  }
  S q(std::size_t t) const { return (*live)[t][static_cast<std::size_t>(tokens[t])]; }
  double target_value(std::size_t t) const { return t < length() ? state_value((*target)[t]) : 0.0; }
  double reward_at(std::size_t t) const { return t + 1 == length() ? reward : 0.0; }
};

namespace detail {

template <class S>
S zero_like(const EpisodeRows<S>& ep) {
  return (*ep.live)[0][0] * 0.0;
}

}  // namespace detail

/// Single-step path-consistency residuals
///   -V_target(s_t) + gamma * V_target(s_{t+1}) + r_t - log pi(a_t | s_t).
template <class S>
std::vector<S> pcl_single_residuals(const EpisodeRows<S>& ep, double gamma) {
  std::vector<S> out;
  out.reserve(ep.length());
  for (std::size_t t = 0; t < ep.length(); ++t) {
    const double c = -ep.target_value(t) + gamma * ep.target_value(t + 1) + ep.reward_at(t);
    out.push_back(c - ep.log_pi(t));
  }
  return out;
}

/// Multi-step residuals from every start step t to the end:
///   -V_target(s_t) + gamma^(T-t) r_T - sum_l gamma^l log pi(a_{t+l} | s_{t+l}).
template <class S>
std::vector<S> pcl_multi_residuals(const EpisodeRows<S>& ep, double gamma) {
  const std::size_t n = ep.length();
  std::vector<S> out(n, detail::zero_like(ep));
  S tail = detail::zero_like(ep);
  double ret = ep.reward;
  for (std::size_t t = n; t-- > 0;) {
    tail = t + 1 == n ? ep.log_pi(t) : ep.log_pi(t) + gamma * tail;
    out[t] = (ret - ep.target_value(t)) - tail;
    ret *= gamma;
  }
  return out;
}

/// Sum over the episode of the loss terms of `kind` (not yet normalized).
template <class S>
S episode_loss_sum(const EpisodeRows<S>& ep, LossKind kind, double gamma, double baseline) {
  const std::size_t n = ep.length();
  S sum = detail::zero_like(ep);
  switch (kind) {
    case LossKind::mle:
      for (std::size_t t = 0; t < n; ++t) sum = sum - ep.log_pi(t);
      break;
    case LossKind::pg: {
      double g = ep.reward;
      std::vector<double> q_hat(n);
      for (std::size_t t = n; t-- > 0;) {
        q_hat[t] = g;
        g *= gamma;
      }
      for (std::size_t t = 0; t < n; ++t) sum = sum - (q_hat[t] - baseline) * ep.log_pi(t);
      break;
    }
    case LossKind::q_hard:
      for (std::size_t t = 0; t < n; ++t) {
        const double boot = t + 1 < n ? gamma * max_of((*ep.target)[t + 1]) : 0.0;
        const S r = (ep.reward_at(t) + boot) - ep.q(t);
        sum = sum + 0.5 * r * r;
      }
      break;
    case LossKind::sql_vanilla:
      for (std::size_t t = 0; t < n; ++t) {
        const S r = (ep.reward_at(t) + gamma * ep.target_value(t + 1)) - ep.q(t);
        sum = sum + 0.5 * r * r;
      }
      break;
    case LossKind::pcl_single:
      for (const S& r : pcl_single_residuals(ep, gamma)) sum = sum + 0.5 * r * r;
      break;
    case LossKind::pcl_multi:
      for (const S& r : pcl_multi_residuals(ep, gamma)) sum = sum + 0.5 * r * r;
      break;
  }
  return sum;
}

inline std::size_t episode_term_count(LossKind kind, std::size_t length) { return kind == LossKind::pg ? 1 : length; }

/// Loss of one kind on a batch, generic over the parameter scalar so the same
/// code runs on doubles and on the tape. `target` may be null for MLE and PG.
template <class S>
S batch_loss(const QModel& model, const ParamView<S>& params, const ParamVector* target, const Batch& batch,
             LossKind kind, double gamma, double baseline = 0.0) {
  check_gamma(gamma);
  require(!batch.empty(), "loss on an empty batch");
  require(!needs_target(kind) || target != nullptr, to_string(kind) + " needs a target model");
  S total{};
  bool first = true;
  std::size_t count = 0;
  for (std::size_t r = 0; r < batch.rows(); ++r) {
    const Tokens tokens = batch.row_tokens(r);
    const auto live = model.rows<S>(params, tokens, tokens.size());
    std::vector<Row> target_rows;
    if (needs_target(kind)) target_rows = model.rows(*target, tokens);
    EpisodeRows<S> ep{tokens, batch.rewards[r], &live, &target_rows};
    const S s = episode_loss_sum(ep, kind, gamma, baseline);
    total = first ? s : total + s;
    first = false;
    count += episode_term_count(kind, tokens.size());
  }
  return total / static_cast<double>(count);
}

inline double loss_mle(const QModel& m, const ParamVector& p, const Batch& b) {
  return batch_loss<double>(m, view(p), nullptr, b, LossKind::mle, 1.0);
}
inline double loss_pg(const QModel& m, const ParamVector& p, const Batch& on_policy, double gamma, double baseline = 0.0) {
  return batch_loss<double>(m, view(p), nullptr, on_policy, LossKind::pg, gamma, baseline);
}
inline double loss_q_hard(const QModel& m, const ParamVector& p, const TargetModel& tgt, const Batch& b, double gamma) {
  return batch_loss<double>(m, view(p), &tgt.params, b, LossKind::q_hard, gamma);
}
inline double loss_sql_vanilla(const QModel& m, const ParamVector& p, const TargetModel& tgt, const Batch& b, double gamma) {
  return batch_loss<double>(m, view(p), &tgt.params, b, LossKind::sql_vanilla, gamma);
}
inline double loss_pcl_single(const QModel& m, const ParamVector& p, const TargetModel& tgt, const Batch& b, double gamma) {
  return batch_loss<double>(m, view(p), &tgt.params, b, LossKind::pcl_single, gamma);
}
inline double loss_pcl_multi(const QModel& m, const ParamVector& p, const TargetModel& tgt, const Batch& b, double gamma) {
  return batch_loss<double>(m, view(p), &tgt.params, b, LossKind::pcl_multi, gamma);
}

struct LossReport {
  double total = 0.0;
  std::array<double, kLossKinds> parts{};  // unweighted component losses; 0 when disabled
  GradVector grad;

  double operator[](LossKind k) const { return parts[static_cast<std::size_t>(k)]; }
};

/// Weighted sum of the enabled losses. Every component is evaluated on the
/// union of both batches except policy gradient, which uses on-policy rows
/// only. With `with_grad`, the exact gradient is computed by differentiating
/// the losses with respect to the Q-rows on a tape and backpropagating
/// through the model by hand.
inline LossReport loss_combined(const QModel& model, const ParamVector& params, const TargetModel& target,
                                const Batch& on_batch, const Batch& off_batch, const LossWeights& weights,
                                double gamma, double baseline = 0.0, bool with_grad = true) {
  weights.validate();
  check_gamma(gamma);
  require(!on_batch.empty() || !off_batch.empty(), "loss_combined needs a non-empty batch");
  if (weights[LossKind::pg] > 0.0 && on_batch.empty()) {
    fail(ErrorKind::invalid_argument, "policy-gradient weight > 0 but the on-policy batch is empty");
  }

  struct Episode {
    Tokens tokens;
    double reward;
    bool on_policy;
  };
  std::vector<Episode> episodes;
  for (std::size_t r = 0; r < on_batch.rows(); ++r) episodes.push_back({on_batch.row_tokens(r), on_batch.rewards[r], true});
  for (std::size_t r = 0; r < off_batch.rows(); ++r) episodes.push_back({off_batch.row_tokens(r), off_batch.rewards[r], false});

  std::array<std::size_t, kLossKinds> counts{};
  for (const Episode& e : episodes) {
    for (LossKind k : kAllLosses) {
      if (weights[k] > 0.0 && (k != LossKind::pg || e.on_policy)) {
        counts[static_cast<std::size_t>(k)] += episode_term_count(k, e.tokens.size());
      }
    }
  }
  bool any_target = false;
  for (LossKind k : kAllLosses) any_target = any_target || (weights[k] > 0.0 && needs_target(k));

  LossReport report;
  report.grad = GradVector::zeros_like(params);
  std::array<double, kLossKinds> sums{};
  for (const Episode& e : episodes) {
    const QModel::Cache cache = model.forward(params, e.tokens, e.tokens.size());
    std::vector<Row> target_rows;
    if (any_target) target_rows = model.rows(target.params, e.tokens);

    ad::Tape tape;
    std::vector<std::vector<ad::Var>> live(cache.q.size());
    for (std::size_t t = 0; t < cache.q.size(); ++t) {
      for (double q : cache.q[t]) live[t].push_back(ad::variable(tape, q));
    }
    EpisodeRows<ad::Var> ep{e.tokens, e.reward, &live, &target_rows};
    ad::Var objective = ad::variable(tape, 0.0);
    for (LossKind k : kAllLosses) {
      const std::size_t ki = static_cast<std::size_t>(k);
      if (weights[k] == 0.0 || (k == LossKind::pg && !e.on_policy)) continue;
      const ad::Var s = episode_loss_sum(ep, k, gamma, baseline);
      sums[ki] += s.value();
      objective = objective + s * (weights[k] / static_cast<double>(counts[ki]));
    }
    if (!with_grad) continue;
    const std::vector<double> adj = tape.adjoints(objective.index());
    std::vector<Row> d_rows(live.size());
    for (std::size_t t = 0; t < live.size(); ++t) {
      for (const ad::Var& v : live[t]) d_rows[t].push_back(adj[static_cast<std::size_t>(v.index())]);
    }
    model.backward(params, cache, d_rows, report.grad);
  }
  for (LossKind k : kAllLosses) {
    const std::size_t ki = static_cast<std::size_t>(k);
    if (weights[k] == 0.0) continue;
    report.parts[ki] = sums[ki] / static_cast<double>(counts[ki]);
    report.total += weights[k] * report.parts[ki];
  }
  if (!std::isfinite(report.total) || (with_grad && !report.grad.finite())) {
    fail(ErrorKind::numeric, "non-finite loss or gradient");
  }
  return report;
}

/// Single-step residuals of one episode under (live, target) parameters.
inline std::vector<double> pcl_single_residuals(const QModel& model, const ParamVector& live,
                                                const ParamVector& target, const Trajectory& traj, double gamma) {
  const auto live_rows = model.rows(live, traj.token_ids);
  const auto target_rows = model.rows(target, traj.token_ids);
  return pcl_single_residuals(EpisodeRows<double>{traj.token_ids, traj.terminal_reward, &live_rows, &target_rows}, gamma);
}

inline std::vector<double> pcl_multi_residuals(const QModel& model, const ParamVector& live,
                                               const ParamVector& target, const Trajectory& traj, double gamma) {
  const auto live_rows = model.rows(live, traj.token_ids);
  const auto target_rows = model.rows(target, traj.token_ids);
  return pcl_multi_residuals(EpisodeRows<double>{traj.token_ids, traj.terminal_reward, &live_rows, &target_rows}, gamma);
}

}  // namespace sqlgen
