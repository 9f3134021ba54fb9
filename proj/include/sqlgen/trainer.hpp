#pragma once

// The training loop: each step draws off-policy episodes from the dataset and
// on-policy episodes from the live model (none during warm-up), evaluates the
// weighted losses, takes one descent step on theta, then moves the target
// toward the updated theta by Polyak averaging.

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sqlgen/config.hpp"
#include "sqlgen/core.hpp"
#include "sqlgen/decoding.hpp"
#include "sqlgen/error.hpp"
#include "sqlgen/metrics.hpp"
#include "sqlgen/objectives.hpp"
#include "sqlgen/optim.hpp"
#include "sqlgen/oracle.hpp"
#include "sqlgen/qmodel.hpp"
#include "sqlgen/task.hpp"

namespace sqlgen {

inline constexpr const char* kVersionTag = "sqlgen 0.1.0";

struct TrainState {
  ParamVector params;
  TargetModel target;
  OptimizerState optimizer;
  long long step = 0;
  double baseline = 0.0;  // moving average of on-policy reward for PG
};

class Trainer {
 public:
  Trainer(const TaskSpec& task, TrainConfig config)
      : config_(std::move(config)),
        task_(with_scale(task, task.reward_spec.scale * config_.reward_scale)),
        model_(config_.model, task.vocab.size(), task.t_max) {
    config_.validate();
    if (config_.batch_off > 0 && (!task_.dataset || task_.dataset->empty())) {
      fail(ErrorKind::schema, "batch_off > 0 but the task has no dataset");
    }
    const double n_seq = std::pow(static_cast<double>(task_.vocab.size()), static_cast<double>(task_.t_max));
    if (n_seq <= config_.oracle_cap) {
      oracle_ = soft_value_iteration(task_, config_.gamma, task_.reward_spec.scale, config_.oracle_cap);
    }
  }

  const TrainConfig& config() const { return config_; }
  const TaskSpec& task() const { return task_; }  // with the effective reward scale
  const QModel& model() const { return model_; }
  const std::optional<OracleTables>& oracle() const { return oracle_; }

  TrainState init_state() const {
    TrainState s;
    s.params = model_.init(config_.seed);
    s.target = TargetModel{s.params, config_.rho};
    return s;
  }

  /// One step of the algorithm; advances `state` and returns the step's metrics.
  MetricsRecord train_step(TrainState& state) const {
    const long long k = state.step;
    const bool warmup = k < config_.warmup_steps;
    const TokenId pad = task_.vocab.pad_id();

    std::vector<Trajectory> off;
    if (config_.batch_off > 0) {
      Rng rng(child_seed(config_.seed, Stream::off_policy, static_cast<std::uint64_t>(k)));
      const auto& data = *task_.dataset;
      for (long long i = 0; i < config_.batch_off; ++i) off.push_back(data[rng.index(data.size())]);
    }
    std::vector<Trajectory> on;
    if (!warmup && config_.batch_on > 0) {
      DecodeConfig dc;
      dc.temperature = config_.temperature;
      on = rollout(model_, state.params, task_, static_cast<std::size_t>(config_.batch_on), config_.seed,
                   static_cast<std::uint64_t>(k), dc, static_cast<std::size_t>(config_.threads));
    }
    const Batch on_batch = on.empty() ? Batch{} : pad_batch(on, pad);
    const Batch off_batch = off.empty() ? Batch{} : pad_batch(off, pad);

    LossWeights weights = config_.weights;
    if (on.empty()) weights[LossKind::pg] = 0.0;
    bool any = false;
    for (double w : weights.w) any = any || w > 0.0;

    MetricsRecord rec;
    rec.step = k;
    LossReport report;
    if (any && (!on.empty() || !off.empty())) {
      const double baseline = config_.pg_baseline ? state.baseline : 0.0;
      try {
        report = loss_combined(model_, state.params, state.target, on_batch, off_batch, weights, config_.gamma, baseline);
      } catch (const Error& e) {
        fail(e.kind(), std::string(e.what()) + " at step " + std::to_string(k) + "; batch: " + dump_batch(on, off));
      }
      sgd_update(state.params, report.grad, config_.lr, config_.optimizer, state.optimizer);
    }
    state.target = polyak_update(std::move(state.target), state.params);

    double mean_on = 0.0;
    for (const Trajectory& t : on) mean_on += t.terminal_reward;
    if (!on.empty()) mean_on /= static_cast<double>(on.size());
    double mean_off = 0.0;
    for (const Trajectory& t : off) mean_off += t.terminal_reward;
    if (!off.empty()) mean_off /= static_cast<double>(off.size());
    if (!on.empty()) state.baseline = config_.baseline_decay * state.baseline + (1.0 - config_.baseline_decay) * mean_on;

    rec.set("loss_total", report.total);
    rec.set("loss_pcl_single", report[LossKind::pcl_single]);
    rec.set("loss_pcl_multi", report[LossKind::pcl_multi]);
    rec.set("loss_mle", report[LossKind::mle]);
    rec.set("loss_pg", report[LossKind::pg]);
    rec.set("loss_q_hard", report[LossKind::q_hard]);
    rec.set("loss_sql_vanilla", report[LossKind::sql_vanilla]);
    rec.set("n_on", static_cast<double>(on.size()));
    rec.set("n_off", static_cast<double>(off.size()));
    rec.set("mean_reward_on", mean_on);
    rec.set("mean_reward_off", mean_off);
    ++state.step;
    return rec;
  }

  /// Greedy reward, sampled reward and diversity at eval_p, and oracle gaps
  /// when the task is small enough to enumerate.
  void evaluate(const TrainState& state, MetricsRecord& rec) const {
    const Trajectory greedy = greedy_decode(model_, state.params, task_);
    rec.set("mean_reward_greedy", greedy.terminal_reward);
    DecodeConfig dc;
    dc.p = config_.eval_p;
    const auto samples = sample_many(model_, state.params, task_, dc, static_cast<std::size_t>(config_.eval_samples),
                                     config_.seed, static_cast<std::uint64_t>(state.step), Stream::eval,
                                     static_cast<std::size_t>(config_.threads));
    std::vector<Tokens> seqs;
    std::vector<double> rewards;
    for (const Sample& s : samples) {
      seqs.push_back(s.trajectory.token_ids);
      rewards.push_back(s.trajectory.terminal_reward);
    }
    rec.set("mean_reward_sample", reward_summary(rewards).mean);
    rec.set("h1", entropy_h(seqs, 1).nats);
    rec.set("h2", entropy_h(seqs, 2).nats);
    if (oracle_) {
      const OracleGap gap = oracle_gap(task_, *oracle_, model_, state.params);
      rec.set("tv_to_oracle", gap.max_tv);
      rec.set("value_gap_to_oracle", gap.max_value_gap);
      const PolicyReturn ret = exact_policy_return(task_, model_policy(model_, state.params), config_.gamma, config_.oracle_cap);
      rec.set("soft_return", ret.soft_return);
      rec.set("expected_reward", ret.expected_reward);
    }
  }

  bool eval_due(const TrainState& state) const { return state.step % config_.eval_every == 0; }

  /// Runs train steps until state.step == config.steps, calling `on_record`
  /// after each one (evaluation fields included on eval steps).
  void run(TrainState& state, const std::function<void(const MetricsRecord&, const TrainState&)>& on_record = {}) const {
    while (state.step < config_.steps) {
      MetricsRecord rec = train_step(state);
      if (eval_due(state)) evaluate(state, rec);
      if (on_record) on_record(rec, state);
    }
  }

  // ---------------------------------------------------------- checkpoints

  nlohmann::ordered_json checkpoint(const TrainState& s) const {
    nlohmann::ordered_json j;
    j["config"] = to_json(config_);
    j["params"] = params_to_json(s.params);
    j["target_params"] = params_to_json(s.target.params);
    j["step"] = s.step;
    j["seed"] = config_.seed;
    j["optimizer"] = {{"kind", to_string(config_.optimizer)}, {"m", s.optimizer.m}, {"v", s.optimizer.v}, {"t", s.optimizer.t}};
    j["baseline"] = s.baseline;
    return j;
  }

  TrainState restore(const nlohmann::json& j) const {
    TrainState s;
    s.params = params_from_json(j.at("params"), model_.layout());
    s.target = TargetModel{params_from_json(j.at("target_params"), model_.layout()), config_.rho};
    s.step = j.at("step").get<long long>();
    if (j.contains("optimizer")) {
      const auto& o = j.at("optimizer");
      s.optimizer.m = o.at("m").get<std::vector<double>>();
      s.optimizer.v = o.at("v").get<std::vector<double>>();
      s.optimizer.t = o.at("t").get<long long>();
    }
    s.baseline = j.value("baseline", 0.0);
    return s;
  }

 private:
  std::string dump_batch(const std::vector<Trajectory>& on, const std::vector<Trajectory>& off) const {
    nlohmann::json j = nlohmann::json::array();
    for (const auto* set : {&on, &off}) {
      for (const Trajectory& t : *set) j.push_back({{"tokens", decode(t.token_ids, task_.vocab)}, {"reward", t.terminal_reward}});
    }
    return j.dump();
  }

  TrainConfig config_;
  TaskSpec task_;
  QModel model_;
  std::optional<OracleTables> oracle_;
};

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::io, "cannot write " + path.string());
  out << text;
}

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

struct RunOutputs {
  std::filesystem::path manifest;
  std::filesystem::path metrics;
  std::filesystem::path final_checkpoint;
};

/// Writes manifest.json before the first step, metrics.jsonl (one record per
/// step), checkpoints/step_<n>.json every eval_every steps, and final.json.
/// With `resume`, continues from that checkpoint and appends to the metrics.
inline RunOutputs run_training(const TaskSpec& task, const TrainConfig& config, const std::filesystem::path& out_dir,
                               const std::optional<std::filesystem::path>& resume = std::nullopt) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "checkpoints", ec);
  if (ec) fail(ErrorKind::io, "cannot create " + out_dir.string());
  const Trainer trainer(task, config);
  RunOutputs out{out_dir / "manifest.json", out_dir / "metrics.jsonl", out_dir / "final.json"};

  TrainState state = trainer.init_state();
  if (resume) state = trainer.restore(detail::read_json_file(*resume));

  nlohmann::ordered_json manifest;
  manifest["version"] = kVersionTag;
  manifest["started_utc"] = utc_timestamp();
  manifest["seed"] = config.seed;
  manifest["config"] = to_json(config);
  manifest["task"] = task_to_json(task);
  manifest["effective_reward_scale"] = trainer.task().reward_spec.scale;
  manifest["resumed_from"] = resume ? nlohmann::ordered_json(resume->string()) : nlohmann::ordered_json(nullptr);
  manifest["start_step"] = state.step;
  manifest["outputs"] = {{"metrics", out.metrics.string()},
                         {"checkpoints", (out_dir / "checkpoints").string()},
                         {"final", out.final_checkpoint.string()}};
  write_text(out.manifest, manifest.dump(2) + "\n");

  std::ofstream metrics(out.metrics, resume ? std::ios::app | std::ios::binary : std::ios::trunc | std::ios::binary);
  if (!metrics) fail(ErrorKind::io, "cannot write " + out.metrics.string());
  auto save = [&](const TrainState& s) {
    if (config.checkpoints) {
      write_text(out_dir / "checkpoints" / ("step_" + std::to_string(s.step) + ".json"), trainer.checkpoint(s).dump() + "\n");
    }
  };
  if (!resume) save(state);
  trainer.run(state, [&](const MetricsRecord& rec, const TrainState& s) {
    metrics << rec.to_json().dump() << '\n';
    if (trainer.eval_due(s)) save(s);
  });
  metrics.flush();
  write_text(out.final_checkpoint, trainer.checkpoint(state).dump() + "\n");
  return out;
}

}  // namespace sqlgen
