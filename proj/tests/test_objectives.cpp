#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "helpers.hpp"

using namespace sqlgen;
using namespace sqlgen::testing;

namespace {

const double kLn2 = std::log(2.0);

double episode_sum(LossKind k, const Tokens& tokens, double reward, const std::vector<Row>& live,
                   const std::vector<Row>& target, double gamma, double baseline = 0.0) {
  EpisodeRows<double> ep{tokens, reward, &live, &target};
  return episode_loss_sum(ep, k, gamma, baseline);
}

// Every complete episode of a task, by brute force.
std::vector<Tokens> all_episodes(const TaskSpec& task) {
  std::vector<Tokens> done;
  std::vector<Tokens> open{Tokens{}};
  while (!open.empty()) {
    const Tokens s = open.back();
    open.pop_back();
    for (std::size_t a = 0; a < task.vocab.size(); ++a) {
      Tokens next = s;
      next.push_back(static_cast<TokenId>(a));
      const bool ends = task.vocab.is_eos(next.back()) || next.size() >= task.t_max;
      (ends ? done : open).push_back(next);
    }
  }
  return done;
}

std::vector<Row> oracle_rows(const OracleTables& t, const Tokens& tokens) {
  std::vector<Row> rows;
  for (std::size_t k = 0; k < tokens.size(); ++k) rows.push_back(t.at(Tokens(tokens.begin(), tokens.begin() + static_cast<long>(k))).q);
  return rows;
}

}  // namespace

TEST(Mle, Examples) {
  const QModel m(small_model(), 4, 3);
  const ParamVector uniform = constant_rows(m, {0.3, 0.3, 0.3, 0.3});
  const Batch b = pad_batch({traj({0, 1, 2}, 0), traj({3}, 0)}, 4);
  EXPECT_NEAR(loss_mle(m, uniform, b), std::log(4.0), 1e-15);
  EXPECT_NEAR(loss_mle(m, uniform, b), 1.3863, 1e-4);

  // all mass on the observed tokens
  const std::vector<Row> sharp{{800, 0, 0, 0}, {0, 800, 0, 0}};
  EXPECT_NEAR(episode_sum(LossKind::mle, {0, 1}, 0, sharp, {}, 1.0), 0.0, 1e-300);

  // hand sum over a 2-row batch, rows evaluated one prefix at a time
  const ParamVector p = m.init(5);
  const Batch two = pad_batch({traj({2, 1}, 0), traj({3}, 0)}, 4);
  double hand = 0.0;
  for (const auto& [prefix, a] : std::vector<std::pair<Tokens, int>>{{{}, 2}, {{2}, 1}, {{}, 3}}) {
    const Row q = m.q_row(p, prefix);
    double z = 0.0;
    for (double x : q) z += std::exp(x);
    hand += -(q[static_cast<std::size_t>(a)] - std::log(z));
  }
  EXPECT_NEAR(loss_mle(m, p, two), hand / 3.0, 1e-14);
}

TEST(RewardToGo, Examples) {
  const auto a = reward_to_go(traj({0, 0, 0}, 1.0), 0.5);
  EXPECT_EQ(a, (std::vector<double>{0.25, 0.5, 1.0}));
  for (double x : reward_to_go(traj({0, 1}, 0.0), 0.7)) EXPECT_EQ(x, 0.0);
  EXPECT_EQ(reward_to_go(traj({0, 1, 1, 0}, 3.0), 1.0), (std::vector<double>{3, 3, 3, 3}));
}

TEST(PolicyGradient, Examples) {
  const QModel m(small_model(), 2, 3);
  const ParamVector p = m.init(3);
  const TargetModel tgt{p, 0.9};
  const Batch zero = pad_batch({traj({0, 1}, 0.0), traj({1}, 0.0)}, 2);
  const LossReport z = loss_combined(m, p, tgt, zero, Batch{}, LossWeights::only(LossKind::pg), 0.9);
  EXPECT_EQ(z.total, 0.0);
  for (double g : z.grad.flat()) EXPECT_EQ(g, 0.0);

  const Batch equal = pad_batch({traj({0, 1}, 0.7), traj({1, 0}, 0.7)}, 2);
  const LossReport c = loss_combined(m, p, tgt, equal, Batch{}, LossWeights::only(LossKind::pg), 1.0, 0.7);
  for (double g : c.grad.flat()) EXPECT_EQ(g, 0.0);

  const ParamVector uniform = constant_rows(m, {0.0, 0.0});
  EXPECT_NEAR(loss_pg(m, uniform, pad_batch({traj({0, 1}, 1.0)}, 2), 1.0), 2.0 * kLn2, 1e-15);
  EXPECT_NEAR(loss_pg(m, uniform, pad_batch({traj({0, 1}, 1.0)}, 2), 1.0), 1.3863, 1e-4);

  EXPECT_THROW(loss_combined(m, p, tgt, Batch{}, equal, LossWeights::only(LossKind::pg), 1.0), Error);
}

TEST(QHard, Examples) {
  // step 0: r=0, gamma=1, next target row [1,2], Q=2; step 1 is made exact
  EXPECT_NEAR(episode_sum(LossKind::q_hard, {0, 1}, 2.0, {{2, 0}, {0, 2}}, {{9, 9}, {1, 2}}, 1.0), 0.0, 1e-15);
  EXPECT_NEAR(episode_sum(LossKind::q_hard, {0}, 1.0, {{0, 0}}, {{5, 5}}, 1.0), 0.5, 1e-15);
  // r=0, gamma=0.5, next row [0,4], Q=1: 0.5 * (2 - 1)^2
  EXPECT_NEAR(episode_sum(LossKind::q_hard, {0, 1}, 3.0, {{1, 0}, {0, 3}}, {{0, 0}, {0, 4}}, 0.5), 0.5, 1e-15);
}

TEST(SqlVanilla, Examples) {
  EXPECT_NEAR(episode_sum(LossKind::sql_vanilla, {0, 0}, 1.0, {{kLn2, 0}, {1, 0}}, {{0, 0}, {0, 0}}, 1.0), 0.0, 1e-15);
  EXPECT_NEAR(episode_sum(LossKind::sql_vanilla, {1}, 1.0, {{0, 1}}, {{3, 3}}, 1.0), 0.0, 1e-15);
  const double v = std::log(1.0 + std::exp(1.0));
  EXPECT_NEAR(episode_sum(LossKind::sql_vanilla, {0, 1}, 1.0, {{0, 0}, {0, 1}}, {{0, 0}, {0, 1}}, 1.0), 0.5 * v * v, 1e-15);
  EXPECT_NEAR(0.5 * v * v, 0.8624, 1e-4);
}

TEST(PclSingle, Examples) {
  const std::vector<Row> u1{{0, 0}};
  EXPECT_NEAR(episode_sum(LossKind::pcl_single, {1}, 1.0, u1, u1, 1.0), 0.5, 1e-15);
  const std::vector<Row> u2{{0, 0}, {0, 0}};
  EpisodeRows<double> ep{Tokens{0, 1}, 0.0, &u2, &u2};
  const Tokens toks{0, 1};
  ep.tokens = toks;
  const auto r = pcl_single_residuals(ep, 1.0);
  EXPECT_NEAR(r[0], kLn2, 1e-15);
  EXPECT_NEAR(0.5 * r[0] * r[0], 0.2402, 1e-4);
}

TEST(PclMulti, Examples) {
  const std::vector<Row> u1{{0, 0}};
  EXPECT_NEAR(episode_sum(LossKind::pcl_multi, {0}, 1.0, u1, u1, 1.0), 0.5, 1e-15);
  const std::vector<Row> u2{{0, 0}, {0, 0}};
  const Tokens toks{1, 0};
  const auto r = pcl_multi_residuals(EpisodeRows<double>{toks, 0.0, &u2, &u2}, 1.0);
  EXPECT_NEAR(r[0], kLn2, 1e-15);
  EXPECT_NEAR(0.5 * r[0] * r[0], 0.2402, 1e-4);
}

TEST(Combined, Examples) {
  const QModel m(small_model(), 2, 1);
  const ParamVector uniform = constant_rows(m, {0.0, 0.0});
  const TargetModel tgt{uniform, 0.5};
  const Batch b = pad_batch({traj({0}, 1.0)}, 2);
  LossWeights w = LossWeights::only(LossKind::pcl_single);
  w[LossKind::pcl_multi] = 1.0;
  EXPECT_NEAR(loss_combined(m, uniform, tgt, Batch{}, b, w, 1.0).total, 1.0, 1e-15);

  const QModel big(small_model(), 3, 4);
  const ParamVector p = big.init(8);
  const TargetModel t2{big.init(9), 0.5};
  const Batch on = pad_batch({traj({0, 1}, 1.0), traj({2}, 0.0)}, 3);
  const Batch off = pad_batch({traj({1, 1, 2}, -1.0)}, 3);
  const Batch all = concat(on, off, 3);
  EXPECT_NEAR(loss_combined(big, p, t2, on, off, LossWeights::only(LossKind::pcl_multi), 0.9).total,
              loss_pcl_multi(big, p, t2, all, 0.9), 1e-14);
  EXPECT_NEAR(loss_combined(big, p, t2, on, off, LossWeights::only(LossKind::pg), 0.9, 0.2).total,
              loss_pg(big, p, on, 0.9, 0.2), 1e-14);

  // breakdown is reported unweighted and summed with weights
  LossWeights mix;
  mix.w = {0.5, 2.0, 0.25, 0.0, 1.5, 1.0};
  const LossReport r = loss_combined(big, p, t2, on, off, mix, 0.9);
  double total = 0.0;
  for (LossKind k : kAllLosses) total += mix[k] * r[k];
  EXPECT_NEAR(r.total, total, 1e-14);
  EXPECT_NEAR(r[LossKind::q_hard], loss_q_hard(big, p, t2, all, 0.9), 1e-14);
  EXPECT_NEAR(r[LossKind::sql_vanilla], loss_sql_vanilla(big, p, t2, all, 0.9), 1e-14);

  EXPECT_THROW(loss_combined(big, p, t2, Batch{}, Batch{}, mix, 0.9), Error);
  LossWeights none = LossWeights::only(LossKind::mle, 0.0);
  EXPECT_THROW(loss_combined(big, p, t2, on, off, none, 0.9), Error);
  EXPECT_THROW(loss_combined(big, p, t2, on, off, mix, 0.0), Error);
}

TEST(Objectives, PaddingNeutrality) {
  const QModel m(small_model(Arch::fixed_window_mlp), 3, 4);
  const ParamVector p = m.init(12);
  const TargetModel t{m.init(13), 0.5};
  const Batch on = pad_batch({traj({0, 1}, 1.0), traj({2}, 0.0)}, 3);
  const Batch off = pad_batch({traj({1, 1, 2}, -1.0), traj({0}, 0.5)}, 3);
  LossWeights all;
  all.w = {1, 1, 1, 1, 1, 1};
  const LossReport a = loss_combined(m, p, t, on, off, all, 0.8, 0.1);
  const LossReport b = loss_combined(m, p, t, widen(on, 3, 3), widen(off, 1, 3), all, 0.8, 0.1);
  EXPECT_EQ(a.total, b.total);
  EXPECT_EQ(a.parts, b.parts);
  EXPECT_EQ(a.grad, b.grad);
  const Batch both = concat(on, off, 3);
  for (LossKind k : kAllLosses) {
    EXPECT_EQ(batch_loss<double>(m, view(p), &t.params, both, k, 0.8, 0.1),
              batch_loss<double>(m, view(p), &t.params, widen(both, 2, 3), k, 0.8, 0.1));
  }
}

// Multi-step residual against the literal sum of single-step residuals and
// against the direct O(T^2) formula.
TEST(Objectives, TelescopingIdentity) {
  Rng rng(2024);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const Arch arch = rng.uniform() < 0.5 ? Arch::recurrent_cell : Arch::fixed_window_mlp;
    const std::size_t t_max = 2 + rng.index(5);
    const QModel m(small_model(arch, rng.uniform(0.1, 1.5)), 3, t_max);
    const ParamVector live = m.init(rng.index(1u << 30));
    const ParamVector target = m.init(rng.index(1u << 30));
    Tokens ids(1 + rng.index(t_max));
    for (TokenId& a : ids) a = static_cast<TokenId>(rng.index(3));
    const Trajectory tr = traj(ids, rng.uniform(-3.0, 3.0));
    const double gamma = rng.uniform() < 0.2 ? 1.0 : rng.uniform(0.05, 1.0);

    const auto single = pcl_single_residuals(m, live, target, tr, gamma);
    const auto multi = pcl_multi_residuals(m, live, target, tr, gamma);
    const auto lrows = m.rows(live, ids);
    const auto trows = m.rows(target, ids);
    const std::size_t n = ids.size();
    for (std::size_t t = 0; t < n; ++t) {
      double tele = 0.0;
      for (std::size_t l = 0; t + l < n; ++l) tele += std::pow(gamma, static_cast<double>(l)) * single[t + l];
      double direct = -state_value(trows[t]) + std::pow(gamma, static_cast<double>(n - 1 - t)) * tr.terminal_reward;
      for (std::size_t l = 0; t + l < n; ++l) {
        const Row& q = lrows[t + l];
        direct -= std::pow(gamma, static_cast<double>(l)) * (q[static_cast<std::size_t>(ids[t + l])] - state_value(q));
      }
      worst = std::max({worst, std::abs(multi[t] - tele), std::abs(multi[t] - direct)});
    }
  }
  EXPECT_LE(worst, 1e-10);
}

TEST(Objectives, ZeroAtOracleOptimum) {
  for (const char* name : {"ab.json", "landscape.json", "bleu.json"}) {
    const TaskSpec task = load_task(task_path(name));
    for (double gamma : {1.0, 0.8}) {
      const OracleTables tables = soft_value_iteration(task, gamma, task.reward_spec.scale);
      for (const Tokens& e : all_episodes(task)) {
        const auto rows = oracle_rows(tables, e);
        const double r = task.reward(e);
        for (LossKind k : {LossKind::pcl_single, LossKind::pcl_multi, LossKind::sql_vanilla}) {
          EXPECT_NEAR(episode_sum(k, e, r, rows, rows, gamma), 0.0, 1e-9) << name << " " << to_string(k);
        }
      }
    }
  }
}

// Tabular Q-rows trained on pcl_single alone against an oracle target: at the
// zero-loss point log pi equals the oracle advantage.
TEST(Objectives, AdvantageMatching) {
  const TaskSpec task = load_task(task_path("landscape.json"));
  const double gamma = 0.9;
  const OracleTables oracle = soft_value_iteration(task, gamma, 1.0);
  const auto episodes = all_episodes(task);
  std::map<Tokens, Row> table;
  Rng rng(6);
  for (const auto& [prefix, st] : oracle.states) {
    Row q(task.vocab.size());
    for (double& x : q) x = rng.uniform(-1.0, 1.0);
    table[prefix] = q;
  }
  // per-state step sizes scaled by how many episodes pass through the state
  std::map<Tokens, double> visits;
  for (const Tokens& e : episodes) {
    for (std::size_t k = 0; k < e.size(); ++k) visits[Tokens(e.begin(), e.begin() + static_cast<long>(k))] += 1.0;
  }
  double loss = 0.0;
  for (int it = 0; it < 3000; ++it) {
    ad::Tape tape;
    std::map<Tokens, std::vector<ad::Var>> leaves;
    for (const auto& [prefix, q] : table) {
      for (double x : q) leaves[prefix].push_back(ad::variable(tape, x));
    }
    ad::Var total = ad::variable(tape, 0.0);
    for (const Tokens& e : episodes) {
      std::vector<std::vector<ad::Var>> live;
      for (std::size_t k = 0; k < e.size(); ++k) live.push_back(leaves[Tokens(e.begin(), e.begin() + static_cast<long>(k))]);
      const auto target = oracle_rows(oracle, e);
      EpisodeRows<ad::Var> ep{e, task.reward(e), &live, &target};
      total = total + episode_loss_sum(ep, LossKind::pcl_single, gamma, 0.0);
    }
    loss = total.value();
    const auto adj = tape.adjoints(total.index());
    for (auto& [prefix, q] : table) {
      for (std::size_t a = 0; a < q.size(); ++a) q[a] -= 0.5 / visits[prefix] * adj[static_cast<std::size_t>(leaves[prefix][a].index())];
    }
  }
  EXPECT_LE(loss, 1e-14);
  for (const auto& [s, q] : table) {
    for (std::size_t a = 0; a < q.size(); ++a) {
      Tokens next = s;
      next.push_back(static_cast<TokenId>(a));
      const bool ends = task.ends_after(s, static_cast<TokenId>(a));
      const double r = ends ? task.reward(next) : 0.0;
      const double v_next = ends ? 0.0 : oracle.at(next).v;
      EXPECT_NEAR(log_softmax_at(q, a), r + gamma * v_next - oracle.at(s).v, 1e-6);
    }
  }
}
