#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <thread>
#include <vector>

#include "sqlgen/core.hpp"
#include "sqlgen/numeric.hpp"
#include "sqlgen/qmodel.hpp"
#include "sqlgen/rng.hpp"
#include "sqlgen/task.hpp"

namespace sqlgen {

enum class DecodeMode { greedy, sample, top_p, beam };

struct DecodeConfig {
  DecodeMode mode = DecodeMode::sample;
  double p = 1.0;
  std::size_t beam_width = 4;
  std::size_t max_len = 0;  // 0: the task horizon
  double temperature = 1.0;
  bool length_normalize = false;

  void validate() const {
    require(p > 0.0 && p <= 1.0, "top-p must be in (0, 1]");
    require(beam_width >= 1, "beam width must be >= 1");
    require(temperature > 0.0, "temperature must be > 0");
  }
};

/// Keeps the smallest set of most probable tokens whose mass reaches p
/// (ties ordered by token index), zeroes the rest and renormalizes.
inline std::vector<double> top_p_filter(std::span<const double> probs, double p) {
  require(p > 0.0 && p <= 1.0, "top-p must be in (0, 1]");
  std::vector<std::size_t> order(probs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
  std::vector<double> out(probs.size(), 0.0);
  if (p >= 1.0) {
    out.assign(probs.begin(), probs.end());
    return out;
  }
  double mass = 0.0;
  for (std::size_t i : order) {
    out[i] = probs[i];
    mass += probs[i];
    if (mass >= p) break;
  }
  for (double& x : out) x /= mass;
  return out;
}

/// Per-step sampling distribution: softmax(q / temperature), then top-p.
inline std::vector<double> sampling_distribution(std::span<const double> q, double temperature, double p) {
  std::vector<double> scaled(q.begin(), q.end());
  if (temperature != 1.0) {
    for (double& x : scaled) x /= temperature;
  }
  return top_p_filter(policy_from_q(scaled), p);
}

struct Sample {
  Trajectory trajectory;
  double logprob = 0.0;  // log-probability under the sampling distribution
};

inline std::size_t horizon(const TaskSpec& task, const DecodeConfig& cfg) {
  return cfg.max_len == 0 ? task.t_max : std::min(cfg.max_len, task.t_max);
}

inline bool episode_over(const TaskSpec& task, const Tokens& seq, std::size_t max_len) {
  return !seq.empty() && (task.vocab.is_eos(seq.back()) || seq.size() >= max_len);
}

/// Samples one episode token by token from a child stream of `seed`.
inline Sample sample_one(const QModel& model, const ParamVector& params, const TaskSpec& task, const DecodeConfig& cfg,
                         std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t max_len = horizon(task, cfg);
  Sample s;
  Tokens& seq = s.trajectory.token_ids;
  while (!episode_over(task, seq, max_len)) {
    const Row q = model.q_row(params, seq);
    const std::vector<double> dist = sampling_distribution(q, cfg.temperature, cfg.p);
    const std::size_t a = rng.categorical(dist);
    s.logprob += std::log(dist[a]);
    seq.push_back(static_cast<TokenId>(a));
  }
  s.trajectory.terminal_reward = task.reward(seq);
  s.trajectory.source = Source::on_policy;
  return s;
}

/// n on-policy episodes. Episode i draws from child_seed(seed, rollout, step, i),
/// so the result does not depend on how work is split across threads.
inline std::vector<Sample> sample_many(const QModel& model, const ParamVector& params, const TaskSpec& task,
                                       const DecodeConfig& cfg, std::size_t n, std::uint64_t seed, std::uint64_t step,
                                       Stream stream = Stream::rollout, std::size_t threads = 1) {
  cfg.validate();
  std::vector<Sample> out(n);
  auto work = [&](std::size_t begin, std::size_t stride) {
    for (std::size_t i = begin; i < n; i += stride) out[i] = sample_one(model, params, task, cfg, child_seed(seed, stream, step, i));
  };
  if (threads <= 1 || n < 2) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work, t, threads);
    for (std::thread& th : pool) th.join();
  }
  return out;
}

inline std::vector<Trajectory> rollout(const QModel& model, const ParamVector& params, const TaskSpec& task,
                                       std::size_t n, std::uint64_t seed, std::uint64_t step = 0,
                                       const DecodeConfig& cfg = {}, std::size_t threads = 1) {
  require(n >= 1, "rollout needs n >= 1");
  std::vector<Trajectory> out;
  out.reserve(n);
  for (Sample& s : sample_many(model, params, task, cfg, n, seed, step, Stream::rollout, threads)) {
    out.push_back(std::move(s.trajectory));
  }
  return out;
}

/// Argmax token at every step, lowest index on ties.
inline Trajectory greedy_decode(const QModel& model, const ParamVector& params, const TaskSpec& task,
                                std::size_t max_len = 0) {
  const std::size_t limit = max_len == 0 ? task.t_max : std::min(max_len, task.t_max);
  Trajectory traj;
  while (!episode_over(task, traj.token_ids, limit)) {
    traj.token_ids.push_back(static_cast<TokenId>(argmax(model.q_row(params, traj.token_ids))));
  }
  traj.terminal_reward = task.reward(traj.token_ids);
  traj.source = Source::on_policy;
  return traj;
}

struct Hypothesis {
  Trajectory trajectory;
  double score = 0.0;
};

/// Beam search over cumulative log pi. Each step keeps the best `width`
/// expansions of the live beams; finished ones leave the beam. Ordering is
/// by score, then lexicographically by tokens, so results are deterministic.
inline std::vector<Hypothesis> beam_search(const QModel& model, const ParamVector& params, const TaskSpec& task,
                                           std::size_t width, std::size_t max_len = 0, bool length_normalize = false) {
  require(width >= 1, "beam width must be >= 1");
  const std::size_t limit = max_len == 0 ? task.t_max : std::min(max_len, task.t_max);
  struct Cand {
    Tokens seq;
    double logp;
  };
  auto better = [](const Cand& a, const Cand& b) {
    if (a.logp != b.logp) return a.logp > b.logp;
    return a.seq < b.seq;
  };
  auto ranked = [&](const Cand& c) {
    return length_normalize ? c.logp / static_cast<double>(std::max<std::size_t>(1, c.seq.size())) : c.logp;
  };

  std::vector<Cand> alive{{Tokens{}, 0.0}};
  std::vector<Cand> finished;
  while (!alive.empty()) {
    std::vector<Cand> expanded;
    for (const Cand& c : alive) {
      const Row q = model.q_row(params, c.seq);
      const double v = state_value(q);
      for (std::size_t a = 0; a < q.size(); ++a) {
        Cand next{c.seq, c.logp + (q[a] - v)};
        next.seq.push_back(static_cast<TokenId>(a));
        expanded.push_back(std::move(next));
      }
    }
    std::stable_sort(expanded.begin(), expanded.end(), better);
    if (expanded.size() > width) expanded.resize(width);
    alive.clear();
    for (Cand& c : expanded) {
      (episode_over(task, c.seq, limit) ? finished : alive).push_back(std::move(c));
    }
  }
  std::stable_sort(finished.begin(), finished.end(), [&](const Cand& a, const Cand& b) {
    const double ra = ranked(a);
    const double rb = ranked(b);
    if (ra != rb) return ra > rb;
    return a.seq < b.seq;
  });
  if (finished.size() > width) finished.resize(width);
  std::vector<Hypothesis> out;
  for (Cand& c : finished) {
    const double r = task.reward(c.seq);
    out.push_back({Trajectory{std::move(c.seq), r, Source::on_policy}, ranked(c)});
  }
  return out;
}

}  // namespace sqlgen
