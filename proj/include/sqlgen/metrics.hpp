#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sqlgen/core.hpp"
#include "sqlgen/error.hpp"
#include "sqlgen/numeric.hpp"
#include "sqlgen/qmodel.hpp"

namespace sqlgen {

struct EntropyResult {
  double nats = 0.0;
  bool no_ngrams = false;  // every sample was shorter than n
};

/// Shannon entropy (natural log) of the n-gram distribution pooled over all
/// samples. N-grams never cross sequence boundaries.
inline EntropyResult entropy_h(const std::vector<Tokens>& samples, std::size_t n) {
  require(!samples.empty(), "entropy_h needs at least one sample");
  require(n == 1 || n == 2, "entropy_h supports n = 1 or 2");
  std::map<Tokens, std::size_t> counts;
  std::size_t total = 0;
  for (const Tokens& s : samples) {
    for (std::size_t i = 0; i + n <= s.size(); ++i) {
      ++counts[Tokens(s.begin() + static_cast<std::ptrdiff_t>(i), s.begin() + static_cast<std::ptrdiff_t>(i + n))];
      ++total;
    }
  }
  if (total == 0) return {0.0, true};
  double h = 0.0;
  for (const auto& [gram, c] : counts) {
    const double p = static_cast<double>(c) / static_cast<double>(total);
    h -= p * std::log(p);
  }
  return {h, false};
}

/// Mean per-token negative log-likelihood; perplexity is exp of this.
inline double heldout_nll(const QModel& model, const ParamVector& params, const std::vector<Trajectory>& dataset) {
  require(!dataset.empty(), "heldout_nll needs a non-empty dataset");
  double sum = 0.0;
  std::size_t count = 0;
  for (const Trajectory& t : dataset) {
    const auto rows = model.rows(params, t.token_ids);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      sum -= log_softmax_at(rows[i], static_cast<std::size_t>(t.token_ids[i]));
      ++count;
    }
  }
  return sum / static_cast<double>(count);
}

struct RewardSummary {
  double mean = 0.0;
  double std = 0.0;  // population
  double max = 0.0;
};

inline RewardSummary reward_summary(const std::vector<double>& rewards) {
  require(!rewards.empty(), "reward_summary needs at least one sample");
  const double n = static_cast<double>(rewards.size());
  RewardSummary s;
  for (double r : rewards) s.mean += r;
  s.mean /= n;
  double var = 0.0;
  for (double r : rewards) var += (r - s.mean) * (r - s.mean);
  s.std = std::sqrt(var / n);
  s.max = *std::max_element(rewards.begin(), rewards.end());
  return s;
}

/// One line of the metrics log. Fields keep insertion order in the output.
struct MetricsRecord {
  long long step = 0;
  std::vector<std::pair<std::string, double>> values;

  void set(const std::string& key, double value) {
    require(std::isfinite(value), "metric " + key + " is not finite");
    for (auto& kv : values) {
      if (kv.first == key) {
        kv.second = value;
        return;
      }
    }
    values.emplace_back(key, value);
  }

  double get(const std::string& key) const {
    for (const auto& kv : values) {
      if (kv.first == key) return kv.second;
    }
    fail(ErrorKind::invalid_argument, "metric " + key + " not recorded");
  }

  bool has(const std::string& key) const {
    return std::any_of(values.begin(), values.end(), [&](const auto& kv) { return kv.first == key; });
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["step"] = step;
    for (const auto& [k, v] : values) j[k] = v;
    return j;
  }
};

}  // namespace sqlgen
