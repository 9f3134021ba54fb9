#pragma once

// Terminal rewards as weighted sums of synthetic components. Components see
// the emitted sequence with a trailing end-of-sequence token removed, so a
// sequence that stops on eos and one cut at the horizon score alike.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sqlgen/core.hpp"
#include "sqlgen/error.hpp"

namespace sqlgen {

enum class BleuSmoothing { none, add_one };

/// Sentence BLEU: geometric mean of modified n-gram precisions (counts clipped
/// by the maximum count in any single reference) times the brevity penalty
/// against the closest reference length (ties to the shorter). max_n is
/// clamped to the candidate length.
inline double ngram_bleu(const Tokens& candidate, const std::vector<Tokens>& references, std::size_t max_n,
                         BleuSmoothing smoothing = BleuSmoothing::add_one) {
  require(max_n >= 1, "ngram_bleu needs max_n >= 1");
  require(!references.empty(), "ngram_bleu needs at least one reference");
  if (candidate.empty()) return 0.0;

  auto ngram_counts = [](const Tokens& seq, std::size_t n) {
    std::map<Tokens, std::size_t> counts;
    for (std::size_t i = 0; i + n <= seq.size(); ++i) {
      ++counts[Tokens(seq.begin() + static_cast<std::ptrdiff_t>(i),
                      seq.begin() + static_cast<std::ptrdiff_t>(i + n))];
    }
    return counts;
  };

  const std::size_t n_max = std::min(max_n, candidate.size());
  double log_sum = 0.0;
  for (std::size_t n = 1; n <= n_max; ++n) {
    const auto cand = ngram_counts(candidate, n);
    std::map<Tokens, std::size_t> ref_max;
    for (const Tokens& ref : references) {
      for (const auto& [gram, count] : ngram_counts(ref, n)) {
        ref_max[gram] = std::max(ref_max[gram], count);
      }
    }
    double matched = 0.0;
    double total = 0.0;
    for (const auto& [gram, count] : cand) {
      auto it = ref_max.find(gram);
      matched += static_cast<double>(std::min(count, it == ref_max.end() ? 0 : it->second));
      total += static_cast<double>(count);
    }
    if (smoothing == BleuSmoothing::add_one) {
      matched += 1.0;
      total += 1.0;
    }
    if (matched == 0.0) return 0.0;
    log_sum += std::log(matched / total);
  }

  const double c = static_cast<double>(candidate.size());
  double r = std::numeric_limits<double>::infinity();
  for (const Tokens& ref : references) {
    const double len = static_cast<double>(ref.size());
    if (std::abs(len - c) < std::abs(r - c) || (std::abs(len - c) == std::abs(r - c) && len < r)) r = len;
  }
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return bp * std::exp(log_sum / static_cast<double>(n_max));
}

/// Minus the fraction of positions that repeat the previous token.
inline double repetition_penalty(const Tokens& tokens) {
  std::size_t repeats = 0;
  for (std::size_t t = 1; t < tokens.size(); ++t) {
    if (tokens[t] == tokens[t - 1]) ++repeats;
  }
  return -static_cast<double>(repeats) / static_cast<double>(std::max<std::size_t>(1, tokens.size()));
}

enum class RewardKind { exact_match, substring_bonus, ngram_bleu, repetition_penalty, length_window, lookup_table };

struct RewardComponent {
  RewardKind kind = RewardKind::exact_match;
  Tokens target;                       // exact_match, substring_bonus
  std::vector<Tokens> references;      // ngram_bleu
  std::size_t max_n = 4;               // ngram_bleu
  BleuSmoothing smoothing = BleuSmoothing::add_one;
  std::size_t min_len = 0;             // length_window
  std::size_t max_len = 0;
  std::map<Tokens, double> table;      // lookup_table
  std::optional<double> table_default;

  double operator()(const Tokens& seq) const {
    switch (kind) {
      case RewardKind::exact_match:
        return seq == target ? 1.0 : 0.0;
      case RewardKind::substring_bonus:
        return std::search(seq.begin(), seq.end(), target.begin(), target.end()) != seq.end() ? 1.0 : 0.0;
      case RewardKind::ngram_bleu:
        return ngram_bleu(seq, references, max_n, smoothing);
      case RewardKind::repetition_penalty:
        return repetition_penalty(seq);
      case RewardKind::length_window:
        return seq.size() >= min_len && seq.size() <= max_len ? 1.0 : 0.0;
      case RewardKind::lookup_table: {
        auto it = table.find(seq);
        if (it != table.end()) return it->second;
        if (table_default) return *table_default;
        std::string key;
        for (TokenId id : seq) key += std::to_string(id) + " ";
        fail(ErrorKind::invalid_argument, "lookup_table has no entry for sequence [ " + key + "] and no default");
      }
    }
    return 0.0;
  }
};

struct WeightedComponent {
  RewardComponent component;
  double weight = 1.0;
};

/// Weighted sum of components times a global scale (the folded entropy
/// temperature: larger scale means a greedier soft-optimal policy).
struct RewardSpec {
  std::vector<WeightedComponent> components;
  double scale = 1.0;

  void validate() const {
    require(!components.empty(), "reward spec needs at least one component");
    require(scale > 0.0 && std::isfinite(scale), "reward scale must be positive");
  }
};

inline Tokens strip_eos(const Tokens& tokens, const Vocab& vocab) {
  if (!tokens.empty() && vocab.is_eos(tokens.back())) return Tokens(tokens.begin(), tokens.end() - 1);
  return tokens;
}

inline double reward(const RewardSpec& spec, const Tokens& tokens, const Vocab& vocab) {
  const Tokens seq = strip_eos(tokens, vocab);
  double total = 0.0;
  for (const WeightedComponent& wc : spec.components) total += wc.weight * wc.component(seq);
  return spec.scale * total;
}

/// Keeps the trajectories whose reward under `spec` is at least `threshold`,
/// in their original order. An empty result is fine.
inline std::vector<Trajectory> filter_dataset_by_reward(const std::vector<Trajectory>& dataset, const RewardSpec& spec,
                                                        const Vocab& vocab, double threshold) {
  std::vector<Trajectory> kept;
  for (const Trajectory& t : dataset) {
    if (reward(spec, t.token_ids, vocab) >= threshold) kept.push_back(t);
  }
  return kept;
}

}  // namespace sqlgen
