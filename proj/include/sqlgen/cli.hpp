#pragma once

// `sqlgen` subcommands: train, eval, sample, oracle, gradcheck. Failures print
// one JSON line {"error": <class>, "message": ...} on stderr and exit with a
// class-specific code.

#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sqlgen/config.hpp"
#include "sqlgen/decoding.hpp"
#include "sqlgen/error.hpp"
#include "sqlgen/gradcheck.hpp"
#include "sqlgen/metrics.hpp"
#include "sqlgen/oracle.hpp"
#include "sqlgen/task.hpp"
#include "sqlgen/trainer.hpp"

namespace sqlgen::cli {

inline constexpr double kGradcheckTolerance = 1e-4;

inline int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::usage: return 2;
    case ErrorKind::io: return 3;
    case ErrorKind::schema: return 4;
    case ErrorKind::numeric: return 5;
    case ErrorKind::invalid_argument: return 6;
  }
  return 1;
}

inline int report_error(std::ostream& err, ErrorKind kind, const std::string& message) {
  nlohmann::ordered_json j;
  j["error"] = std::string(to_string(kind));
  j["message"] = message;
  err << j.dump() << '\n';
  return exit_code(kind);
}

inline void require_file(const std::string& path) {
  if (!std::filesystem::is_regular_file(path)) fail(ErrorKind::io, "file not found: " + path);
}

struct Options {
  std::string task;
  std::string config;
  std::string out;
  std::string checkpoint;
  std::string resume;
  std::string dataset;
  std::optional<std::uint64_t> seed;
  std::optional<long long> threads;
  std::vector<std::string> overrides;
  double gamma = 1.0;
  std::optional<double> scale;
  std::vector<double> p_values{1.0};
  long long n = 100;
  double temperature = 1.0;
  std::size_t probes = 50;
  double step = 1e-5;
};

inline std::pair<Trainer, TrainState> load_checkpoint(const TaskSpec& task, const std::string& path) {
  require_file(path);
  const nlohmann::json ckpt = detail::read_json_file(path);
  if (!ckpt.contains("config")) fail(ErrorKind::schema, "checkpoint has no config");
  Trainer trainer(task, config_resolve(ckpt.at("config")));
  TrainState state = trainer.restore(ckpt);
  return {std::move(trainer), std::move(state)};
}

inline int run_train(const Options& o, std::ostream& out) {
  require_file(o.task);
  nlohmann::json file = nlohmann::json::object();
  if (!o.config.empty()) {
    require_file(o.config);
    file = detail::read_json_file(o.config);
  }
  std::vector<std::string> overrides = o.overrides;
  if (o.seed) overrides.push_back("seed=" + std::to_string(*o.seed));
  if (o.threads) overrides.push_back("threads=" + std::to_string(*o.threads));
  const TrainConfig config = config_resolve(file, overrides);
  const TaskSpec task = load_task(o.task);
  std::optional<std::filesystem::path> resume;
  if (!o.resume.empty()) {
    require_file(o.resume);
    resume = o.resume;
  }
  const RunOutputs res = run_training(task, config, o.out, resume);
  out << nlohmann::json{{"manifest", res.manifest.string()},
                        {"metrics", res.metrics.string()},
                        {"final", res.final_checkpoint.string()}}
             .dump()
      << '\n';
  return 0;
}

inline int run_eval(const Options& o, std::ostream& out) {
  require_file(o.task);
  const TaskSpec task = load_task(o.task);
  auto [trainer, state] = load_checkpoint(task, o.checkpoint);
  const std::uint64_t seed = o.seed.value_or(trainer.config().seed);
  nlohmann::ordered_json report;
  report["greedy_reward"] = greedy_decode(trainer.model(), state.params, trainer.task()).terminal_reward;
  for (double p : o.p_values) {
    DecodeConfig dc;
    dc.p = p;
    dc.temperature = o.temperature;
    const auto samples = sample_many(trainer.model(), state.params, trainer.task(), dc, static_cast<std::size_t>(o.n),
                                     seed, 0, Stream::eval);
    std::vector<Tokens> seqs;
    std::vector<double> rewards;
    for (const Sample& s : samples) {
      seqs.push_back(s.trajectory.token_ids);
      rewards.push_back(s.trajectory.terminal_reward);
    }
    std::ostringstream key;
    key << p;
    report["sample_reward_mean@" + key.str()] = reward_summary(rewards).mean;
    report["h1@" + key.str()] = entropy_h(seqs, 1).nats;
    report["h2@" + key.str()] = entropy_h(seqs, 2).nats;
  }
  std::optional<std::vector<Trajectory>> heldout = task.dataset;
  if (!o.dataset.empty()) heldout = load_dataset(o.dataset, task);
  if (heldout && !heldout->empty()) {
    const double nll = heldout_nll(trainer.model(), state.params, *heldout);
    report["nll"] = nll;
    report["perplexity"] = std::exp(nll);
  } else {
    report["nll"] = nullptr;
  }
  if (trainer.oracle()) {
    const OracleGap gap = oracle_gap(trainer.task(), *trainer.oracle(), trainer.model(), state.params);
    report["tv_to_oracle"] = gap.max_tv;
    report["value_gap_to_oracle"] = gap.max_value_gap;
  }
  out << report.dump() << '\n';
  return 0;
}

inline int run_sample(const Options& o, std::ostream& out) {
  require_file(o.task);
  const TaskSpec task = load_task(o.task);
  auto [trainer, state] = load_checkpoint(task, o.checkpoint);
  DecodeConfig dc;
  dc.p = o.p_values.empty() ? 1.0 : o.p_values.front();
  dc.temperature = o.temperature;
  const auto samples = sample_many(trainer.model(), state.params, trainer.task(), dc, static_cast<std::size_t>(o.n),
                                   o.seed.value_or(trainer.config().seed), 0, Stream::eval);
  for (const Sample& s : samples) {
    nlohmann::ordered_json j;
    j["tokens"] = decode(s.trajectory.token_ids, task.vocab);
    j["logprob"] = s.logprob;
    j["reward"] = s.trajectory.terminal_reward;
    out << j.dump() << '\n';
  }
  return 0;
}

inline int run_oracle(const Options& o, std::ostream& out) {
  require_file(o.task);
  const TaskSpec task = load_task(o.task);
  const OracleTables tables = soft_value_iteration(task, o.gamma, o.scale.value_or(task.reward_spec.scale));
  out << oracle_to_json(tables, task.vocab).dump() << '\n';
  return 0;
}

inline int run_gradcheck_cmd(const Options& o, std::ostream& out) {
  const GradcheckReport r = run_gradcheck(o.seed.value_or(0), o.probes, o.step);
  nlohmann::ordered_json j;
  for (LossKind k : kAllLosses) j[to_string(k)] = r.max_rel_error[static_cast<std::size_t>(k)];
  j["max_rel_error"] = r.worst();
  j["probes_per_loss"] = r.probes_per_loss;
  j["tolerance"] = kGradcheckTolerance;
  j["pass"] = r.worst() <= kGradcheckTolerance;
  out << j.dump() << '\n';
  return r.worst() <= kGradcheckTolerance ? 0 : 1;
}

inline int parse_and_dispatch(int argc, const char* const* argv, std::ostream& out = std::cout,
                              std::ostream& err = std::cerr) {
  CLI::App app{"Soft Q-learning for sequence generation on small token spaces", "sqlgen"};
  app.require_subcommand(1);
  Options o;

  auto add_seed = [&](CLI::App* sub) {
    sub->add_option_function<std::uint64_t>("--seed", [&](std::uint64_t s) { o.seed = s; }, "Run seed");
  };

  CLI::App* train = app.add_subcommand("train", "Train a model on a task");
  train->add_option("--task", o.task, "Task JSON")->required();
  train->add_option("--config", o.config, "Training config JSON");
  train->add_option("--out", o.out, "Output directory")->required();
  train->add_option("--set", o.overrides, "Config override key=value (repeatable)");
  train->add_option("--resume", o.resume, "Checkpoint to resume from");
  train->add_option_function<long long>("--threads", [&](long long t) { o.threads = t; }, "Rollout threads; 1 is fully deterministic");
  add_seed(train);

  CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("--task", o.task, "Task JSON")->required();
  eval->add_option("--checkpoint", o.checkpoint, "Checkpoint JSON")->required();
  eval->add_option("--p", o.p_values, "Top-p values")->delimiter(',');
  eval->add_option("--n", o.n, "Samples per p");
  eval->add_option("--dataset", o.dataset, "Held-out JSONL for NLL");
  add_seed(eval);

  CLI::App* sample = app.add_subcommand("sample", "Sample sequences from a checkpoint as JSONL");
  sample->add_option("--task", o.task, "Task JSON")->required();
  sample->add_option("--checkpoint", o.checkpoint, "Checkpoint JSON")->required();
  sample->add_option("--n", o.n, "Number of samples");
  sample->add_option("--p", o.p_values, "Top-p")->delimiter(',');
  sample->add_option("--temperature", o.temperature, "Sampling temperature");
  add_seed(sample);

  CLI::App* oracle = app.add_subcommand("oracle", "Exact soft value iteration tables as JSON");
  oracle->add_option("--task", o.task, "Task JSON")->required();
  oracle->add_option("--gamma", o.gamma, "Discount");
  oracle->add_option_function<double>("--scale", [&](double s) { o.scale = s; }, "Reward scale (default: task's)");

  CLI::App* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of all losses");
  gradcheck->add_option("--probes", o.probes, "Probed coordinates per loss");
  gradcheck->add_option("--step", o.step, "Central-difference step");
  add_seed(gradcheck);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return 0;
    return report_error(err, ErrorKind::usage, e.what());
  }

  try {
    if (*train) return run_train(o, out);
    if (*eval) return run_eval(o, out);
    if (*sample) return run_sample(o, out);
    if (*oracle) return run_oracle(o, out);
    if (*gradcheck) return run_gradcheck_cmd(o, out);
  } catch (const Error& e) {
    return report_error(err, e.kind(), e.what());
  } catch (const nlohmann::json::exception& e) {
    return report_error(err, ErrorKind::schema, e.what());
  } catch (const std::exception& e) {
    return report_error(err, ErrorKind::invalid_argument, e.what());
  }
  return report_error(err, ErrorKind::usage, "no subcommand");
}

}  // namespace sqlgen::cli
