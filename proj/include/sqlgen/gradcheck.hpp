#pragma once

// Finite-difference audit of every loss on random small models and batches.

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "sqlgen/autodiff.hpp"
#include "sqlgen/core.hpp"
#include "sqlgen/decoding.hpp"
#include "sqlgen/objectives.hpp"
#include "sqlgen/qmodel.hpp"
#include "sqlgen/rng.hpp"
#include "sqlgen/task.hpp"

namespace sqlgen {

struct GradcheckReport {
  std::array<double, kLossKinds> max_rel_error{};  // per loss, over both architectures
  std::size_t probes_per_loss = 0;

  double worst() const {
    double w = 0.0;
    for (double e : max_rel_error) w = std::max(w, e);
    return w;
  }
};

/// A 4-token task with eos and horizon 4, rewarded by exact match so that
/// sampled batches carry a mix of rewards.
inline TaskSpec gradcheck_task() {
  TaskSpec task;
  task.vocab = Vocab({"a", "b", "c", "<eos>"}, std::string("<eos>"));
  task.t_max = 4;
  RewardComponent c;
  c.kind = RewardKind::exact_match;
  c.target = {0, 1};
  task.reward_spec.components.push_back({c, 1.0});
  RewardComponent rep;
  rep.kind = RewardKind::repetition_penalty;
  task.reward_spec.components.push_back({rep, 0.5});
  return task;
}

inline GradcheckReport run_gradcheck(std::uint64_t seed, std::size_t n_probes = 50, double step = 1e-5) {
  const TaskSpec task = gradcheck_task();
  GradcheckReport report;
  std::size_t arch_index = 0;
  for (Arch arch : {Arch::recurrent_cell, Arch::fixed_window_mlp}) {
    ModelConfig mc;
    mc.arch = arch;
    mc.embed_dim = 3;
    mc.hidden_dim = 5;
    mc.window = 2;
    mc.init_range = 0.8;  // far from the near-uniform start, so gradients are not trivially small
    const QModel model(mc, task.vocab.size(), task.t_max);
    const std::uint64_t s = child_seed(seed, Stream::gradcheck, arch_index++);
    const ParamVector params = model.init(s);
    const TargetModel target{model.init(s + 1), 0.9};

    Rng rng(child_seed(s, Stream::gradcheck, 99));
    const Batch on = pad_batch(rollout(model, params, task, 4, s), task.vocab.pad_id());
    std::vector<Trajectory> off_trajs;
    for (int i = 0; i < 3; ++i) {
      Trajectory t;
      const std::size_t len = 1 + rng.index(task.t_max);
      for (std::size_t j = 0; j + 1 < len; ++j) t.token_ids.push_back(static_cast<TokenId>(rng.index(3)));
      t.token_ids.push_back(static_cast<TokenId>(rng.index(4)));
      t.terminal_reward = rng.uniform(-1.0, 2.0);
      off_trajs.push_back(t);
    }
    const Batch off = pad_batch(off_trajs, task.vocab.pad_id());
    const double baseline = rng.uniform(-0.5, 0.5);
    const double gamma = rng.uniform(0.7, 1.0);

    for (LossKind k : kAllLosses) {
      const LossWeights w = LossWeights::only(k);
      const LossReport lr = loss_combined(model, params, target, on, off, w, gamma, baseline);
      const Batch& value_batch = k == LossKind::pg ? on : concat(on, off, task.vocab.pad_id());
      auto value_fn = [&](const ParamVector& p) {
        return batch_loss<double>(model, view(p), &target.params, value_batch, k, gamma, baseline);
      };
      const double err = finite_diff_check(value_fn, params, lr.grad, n_probes, step, s);
      auto& slot = report.max_rel_error[static_cast<std::size_t>(k)];
      slot = std::max(slot, err);
    }
    report.probes_per_loss = std::min(n_probes, params.total_count());
  }
  return report;
}

}  // namespace sqlgen
