#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "sqlgen/error.hpp"

namespace sqlgen {

using TokenId = int;
using Tokens = std::vector<TokenId>;

/// Token alphabet. The end-of-sequence token is optional: tasks without one
/// always run to the horizon.
class Vocab {
 public:
  Vocab() = default;

  Vocab(std::vector<std::string> tokens, std::optional<std::string> eos = std::nullopt)
      : tokens_(std::move(tokens)) {
    require(tokens_.size() >= 2, "vocab needs at least 2 tokens");
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      auto [it, inserted] = index_.emplace(tokens_[i], static_cast<TokenId>(i));
      require(inserted, "duplicate token '" + tokens_[i] + "' in vocab");
    }
    if (eos) {
      auto it = index_.find(*eos);
      require(it != index_.end(), "eos token '" + *eos + "' is not in the vocab");
      eos_id_ = it->second;
    }
  }

  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  std::optional<TokenId> eos_id() const { return eos_id_; }
  bool is_eos(TokenId id) const { return eos_id_ && *eos_id_ == id; }

  /// Padding sentinel; never a valid token id.
  TokenId pad_id() const { return static_cast<TokenId>(tokens_.size()); }

  bool contains(TokenId id) const { return id >= 0 && static_cast<std::size_t>(id) < tokens_.size(); }

  TokenId id(const std::string& token) const {
    auto it = index_.find(token);
    if (it == index_.end()) fail(ErrorKind::invalid_argument, "unknown token " + token);
    return it->second;
  }

  const std::string& token(TokenId id) const {
    require(contains(id), "token id " + std::to_string(id) + " out of range");
    return tokens_[static_cast<std::size_t>(id)];
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
  std::optional<TokenId> eos_id_;
};

inline Tokens encode(const std::vector<std::string>& text, const Vocab& vocab) {
  Tokens ids;
  ids.reserve(text.size());
  for (const std::string& t : text) ids.push_back(vocab.id(t));
  return ids;
}

inline std::vector<std::string> decode(const Tokens& ids, const Vocab& vocab) {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (TokenId id : ids) out.push_back(vocab.token(id));
  return out;
}

enum class Source { on_policy, off_policy };

/// A complete episode. Intermediate rewards are zero; the terminal reward is
/// attached to the last emitted token.
struct Trajectory {
  Tokens token_ids;
  double terminal_reward = 0.0;
  Source source = Source::off_policy;
};

/// Rows padded with the vocab's PAD sentinel; mask marks valid positions.
struct Batch {
  std::vector<Tokens> token_matrix;
  std::vector<std::vector<unsigned char>> mask;
  std::vector<double> rewards;

  std::size_t rows() const { return token_matrix.size(); }
  bool empty() const { return token_matrix.empty(); }
  std::size_t width() const { return token_matrix.empty() ? 0 : token_matrix.front().size(); }

  std::size_t length(std::size_t row) const {
    std::size_t n = 0;
    for (unsigned char m : mask[row]) n += m;
    return n;
  }

  /// Valid prefix of a row.
  Tokens row_tokens(std::size_t row) const {
    const std::size_t n = length(row);
    return Tokens(token_matrix[row].begin(), token_matrix[row].begin() + static_cast<std::ptrdiff_t>(n));
  }

  std::size_t valid_positions() const {
    std::size_t n = 0;
    for (std::size_t r = 0; r < rows(); ++r) n += length(r);
    return n;
  }
};

inline Batch pad_batch(const std::vector<Trajectory>& trajs, TokenId pad) {
  require(!trajs.empty(), "pad_batch needs at least one trajectory");
  std::size_t width = 0;
  for (const Trajectory& t : trajs) width = std::max(width, t.token_ids.size());
  Batch batch;
  for (const Trajectory& t : trajs) {
    Tokens row(width, pad);
    std::vector<unsigned char> mask(width, 0);
    for (std::size_t i = 0; i < t.token_ids.size(); ++i) {
      row[i] = t.token_ids[i];
      mask[i] = 1;
    }
    batch.token_matrix.push_back(std::move(row));
    batch.mask.push_back(std::move(mask));
    batch.rewards.push_back(t.terminal_reward);
  }
  return batch;
}

/// Appends the rows of `extra` to `base`, re-padding to the wider of the two.
inline Batch concat(const Batch& base, const Batch& extra, TokenId pad) {
  std::vector<Trajectory> all;
  for (const Batch* b : {&base, &extra}) {
    for (std::size_t r = 0; r < b->rows(); ++r) all.push_back({b->row_tokens(r), b->rewards[r], Source::off_policy});
  }
  if (all.empty()) return Batch{};
  return pad_batch(all, pad);
}

/// Appends `extra` PAD columns; used to check padding neutrality.
inline Batch widen(Batch batch, std::size_t extra, TokenId pad) {
  for (std::size_t r = 0; r < batch.rows(); ++r) {
    batch.token_matrix[r].insert(batch.token_matrix[r].end(), extra, pad);
    batch.mask[r].insert(batch.mask[r].end(), extra, 0);
  }
  return batch;
}

}  // namespace sqlgen
