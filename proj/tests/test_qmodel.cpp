#include <gtest/gtest.h>

#include <cmath>

#include "helpers.hpp"

using namespace sqlgen;
using namespace sqlgen::testing;

TEST(QRow, ZeroParamsGiveZeroRows) {
  for (Arch arch : {Arch::recurrent_cell, Arch::fixed_window_mlp}) {
    const QModel m(small_model(arch), 3, 4);
    const ParamVector z = m.zeros();
    for (const Tokens& prefix : {Tokens{}, Tokens{0}, Tokens{1, 2, 0}}) {
      for (double q : m.q_row(z, prefix)) EXPECT_EQ(q, 0.0);
    }
  }
}

TEST(QRow, DeterministicAndPrefixSensitive) {
  for (Arch arch : {Arch::recurrent_cell, Arch::fixed_window_mlp}) {
    const QModel m(small_model(arch), 3, 4);
    const ParamVector p = m.init(3);
    EXPECT_EQ(m.q_row(p, Tokens{0, 1}), m.q_row(p, Tokens{0, 1}));
    EXPECT_NE(m.q_row(p, Tokens{0, 1}), m.q_row(p, Tokens{1, 0}));
    EXPECT_THROW(m.q_row(p, Tokens{0, 1, 2, 0}), Error);
    EXPECT_THROW(m.q_row(p, Tokens{5}), Error);
  }
}

TEST(QRow, InitRangeAndZeroHeadBias) {
  const QModel m(small_model(Arch::recurrent_cell, 0.1), 3, 4);
  const ParamVector p = m.init(17);
  for (double x : p.flat()) EXPECT_LE(std::abs(x), 0.1);
  for (double x : p["head.b"]) EXPECT_EQ(x, 0.0);
  EXPECT_EQ(p, m.init(17));
  EXPECT_NE(p, m.init(18));
}

// Scalar recurrent cell (embed 1, hidden 1) evaluated by hand.
TEST(QRow, MatchesHandRecurrence) {
  ModelConfig mc = small_model(Arch::recurrent_cell);
  mc.embed_dim = 1;
  mc.hidden_dim = 1;
  const QModel m(mc, 2, 3);
  ParamVector p = m.zeros();
  p["embed"][0] = 0.3;
  p["embed"][1] = -0.7;
  p["start"][0] = 0.5;
  p["cell.wx"][0] = 1.2;
  p["cell.wh"][0] = -0.4;
  p["cell.b"][0] = 0.1;
  p["head.w"][0] = 2.0;
  p["head.w"][1] = -1.0;
  p["head.b"][0] = 0.25;
  p["head.b"][1] = 0.0;
  const double h0 = std::tanh(1.2 * 0.5 + 0.1);
  const double h1 = std::tanh(1.2 * -0.7 + 0.1 - 0.4 * h0);
  const double h2 = std::tanh(1.2 * 0.3 + 0.1 - 0.4 * h1);
  const Row q = m.q_row(p, Tokens{1, 0});
  EXPECT_NEAR(q[0], 2.0 * h2 + 0.25, 1e-15);
  EXPECT_NEAR(q[1], -1.0 * h2, 1e-15);
  const auto rows = m.rows(p, Tokens{1, 0});
  EXPECT_NEAR(rows[0][0], 2.0 * h0 + 0.25, 1e-15);
  EXPECT_NEAR(rows[1][1], -h1, 1e-15);
}

// Window 2 MLP: the start embedding fills positions before the first token.
TEST(QRow, MatchesHandWindow) {
  ModelConfig mc = small_model(Arch::fixed_window_mlp);
  mc.embed_dim = 1;
  mc.hidden_dim = 1;
  mc.window = 2;
  const QModel m(mc, 2, 3);
  ParamVector p = m.zeros();
  p["embed"][0] = 0.3;
  p["embed"][1] = -0.7;
  p["start"][0] = 0.5;
  p["mlp.w"][0] = 0.9;
  p["mlp.w"][1] = -1.1;
  p["mlp.b"][0] = 0.05;
  p["head.w"][0] = 1.0;
  p["head.w"][1] = 3.0;
  auto expect = [&](double older, double newer) { return std::tanh(0.9 * older - 1.1 * newer + 0.05); };
  EXPECT_NEAR(m.q_row(p, Tokens{})[1], 3.0 * expect(0.5, 0.5), 1e-15);
  EXPECT_NEAR(m.q_row(p, Tokens{1})[1], 3.0 * expect(0.5, -0.7), 1e-15);
  EXPECT_NEAR(m.q_row(p, Tokens{1, 0})[0], expect(-0.7, 0.3), 1e-15);
}

TEST(PolicyValueAdvantage, Examples) {
  const auto u = policy_from_q(std::vector<double>{0, 0, 0});
  for (double x : u) EXPECT_NEAR(x, 1.0 / 3.0, 1e-15);
  const auto p = policy_from_q(std::vector<double>{0.0, std::log(2.0), std::log(3.0)});
  EXPECT_NEAR(p[0], 1.0 / 6.0, 1e-12);
  EXPECT_NEAR(p[1], 2.0 / 6.0, 1e-12);
  EXPECT_NEAR(p[2], 3.0 / 6.0, 1e-12);
  const auto p4 = policy_from_q(std::vector<double>{0.0, 0.6931, 1.0986});
  EXPECT_NEAR(p4[2], 0.5, 1e-4);

  EXPECT_NEAR(state_value(std::vector<double>{0, 0, 0}), std::log(3.0), 1e-15);
  EXPECT_NEAR(state_value(std::vector<double>{0, 0, 0}), 1.0986, 1e-4);
  EXPECT_EQ(state_value(std::vector<double>{5.0}), 5.0);
  EXPECT_NEAR(state_value(std::vector<double>{0, 1}), std::log(1.0 + std::exp(1.0)), 1e-15);
  EXPECT_NEAR(state_value(std::vector<double>{0, 1}), 1.3133, 1e-4);

  for (double a : advantage(std::vector<double>{0, 0, 0})) EXPECT_NEAR(a, -std::log(3.0), 1e-15);
  const auto a01 = advantage(std::vector<double>{0, 1});
  EXPECT_NEAR(a01[0], -1.3133, 1e-4);
  EXPECT_NEAR(a01[1], -0.3133, 1e-4);
}

TEST(PolicyValueAdvantage, Properties) {
  Rng rng(4);
  for (int i = 0; i < 300; ++i) {
    std::vector<double> q(1 + rng.index(6));
    for (double& x : q) x = rng.uniform(-30.0, 30.0);
    const auto pi = policy_from_q(q);
    double sum = 0.0;
    for (double x : pi) {
      EXPECT_GT(x, 0.0);
      sum += x;
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);

    const double c = rng.uniform(-500.0, 500.0);
    std::vector<double> shifted = q;
    for (double& x : shifted) x += c;
    const auto pi_s = policy_from_q(shifted);
    for (std::size_t k = 0; k < q.size(); ++k) EXPECT_NEAR(pi_s[k], pi[k], 1e-10);
    EXPECT_EQ(argmax(shifted), argmax(q));

    const double v = state_value(q);
    const double mx = *std::max_element(q.begin(), q.end());
    EXPECT_GE(v, mx);
    EXPECT_LE(v, mx + std::log(static_cast<double>(q.size())) + 1e-12);

    const auto adv = advantage(q);
    double esum = 0.0;
    for (std::size_t k = 0; k < q.size(); ++k) {
      EXPECT_NEAR(v + adv[k], q[k], 1e-12);
      EXPECT_NEAR(std::exp(adv[k]), pi[k], 1e-12);
      esum += std::exp(adv[k]);
    }
    EXPECT_NEAR(esum, 1.0, 1e-12);
  }
  // no overflow at large magnitudes
  const auto big = policy_from_q(std::vector<double>{1000.0, 999.0});
  EXPECT_NEAR(big[0], 1.0 / (1.0 + std::exp(-1.0)), 1e-12);
}

TEST(Polyak, Examples) {
  const QModel m(small_model(), 3, 4);
  const ParamVector live = m.init(1);
  const ParamVector other = m.init(2);
  EXPECT_EQ(polyak_update(TargetModel{other, 0.0}, live).params, live);
  EXPECT_EQ(polyak_update(TargetModel{other, 1.0}, live).params, other);

  auto layout = std::make_shared<Layout>();
  layout->add("x", {1});
  ParamVector one(layout), zero(layout);
  one.flat()[0] = 1.0;
  EXPECT_NEAR(polyak_update(TargetModel{one, 0.9}, zero).params.flat()[0], 0.9, 1e-15);

  const QModel wider(small_model(Arch::fixed_window_mlp), 3, 4);
  EXPECT_THROW(polyak_update(TargetModel{other, 0.5}, wider.init(1)), Error);
}

TEST(Polyak, GeometricConvergence) {
  const QModel m(small_model(), 3, 4);
  const ParamVector live = m.init(1);
  const double rho = 0.8;
  TargetModel t{m.init(2), rho};
  std::vector<double> gap0(live.total_count());
  for (std::size_t i = 0; i < gap0.size(); ++i) gap0[i] = t.params.flat()[i] - live.flat()[i];
  for (int n = 1; n <= 60; ++n) {
    t = polyak_update(std::move(t), live);
    for (std::size_t i = 0; i < gap0.size(); ++i) {
      EXPECT_NEAR(t.params.flat()[i] - live.flat()[i], std::pow(rho, n) * gap0[i], 1e-10);
    }
  }
}

TEST(Checkpoint, BitExactReload) {
  for (Arch arch : {Arch::recurrent_cell, Arch::fixed_window_mlp}) {
    const QModel m(small_model(arch), 3, 4);
    const ParamVector p = m.init(77);
    const std::string text = params_to_json(p).dump();
    const ParamVector back = params_from_json(json::parse(text), m.layout());
    EXPECT_EQ(back, p);
    for (const Tokens& prefix : {Tokens{}, Tokens{2}, Tokens{0, 1, 1}}) EXPECT_EQ(m.q_row(back, prefix), m.q_row(p, prefix));
  }
  const QModel m(small_model(), 3, 4);
  json j = params_to_json(m.init(1));
  j.erase("head.b");
  EXPECT_THROW(params_from_json(j, m.layout()), Error);
}

TEST(ModelConfig, JsonRoundTripAndValidation) {
  ModelConfig mc = small_model(Arch::fixed_window_mlp);
  mc.window = 3;
  const ModelConfig back = model_config_from_json(to_json(mc));
  EXPECT_EQ(back.arch, mc.arch);
  EXPECT_EQ(back.window, 3u);
  EXPECT_EQ(back.embed_dim, mc.embed_dim);
  mc.window = 5;
  EXPECT_THROW(QModel(mc, 3, 4), Error);
}
