#pragma once

// The generation logits are the Q-function: Q_theta(s, a) = f_theta(a | s).
// A prefix goes in, one Q-value per vocabulary token comes out, and the
// induced policy, state value and advantage are the softmax, log-normalizer
// and log-softmax of that row.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "sqlgen/core.hpp"
#include "sqlgen/error.hpp"
#include "sqlgen/numeric.hpp"
#include "sqlgen/params.hpp"
#include "sqlgen/rng.hpp"

namespace sqlgen {

using Row = std::vector<double>;

inline std::vector<double> policy_from_q(std::span<const double> q) { return softmax(q); }

inline double state_value(std::span<const double> q) { return log_sum_exp(q); }

inline std::vector<double> advantage(std::span<const double> q) {
  const double v = state_value(q);
  std::vector<double> a(q.begin(), q.end());
  for (double& x : a) x -= v;
  return a;
}

enum class Arch { recurrent_cell, fixed_window_mlp };

inline std::string to_string(Arch arch) {
  return arch == Arch::recurrent_cell ? "recurrent_cell" : "fixed_window_mlp";
}

struct ModelConfig {
  Arch arch = Arch::recurrent_cell;
  std::size_t embed_dim = 16;
  std::size_t hidden_dim = 32;
  std::size_t window = 2;  // fixed_window_mlp only
  double init_range = 0.1;
};

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"arch", to_string(c.arch)},
          {"embed_dim", c.embed_dim},
          {"hidden_dim", c.hidden_dim},
          {"window", c.window},
          {"init_range", c.init_range}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  const std::string arch = j.value("arch", std::string("recurrent_cell"));
  if (arch == "recurrent_cell") {
    c.arch = Arch::recurrent_cell;
  } else if (arch == "fixed_window_mlp") {
    c.arch = Arch::fixed_window_mlp;
  } else {
    fail(ErrorKind::schema, "unknown model arch " + arch);
  }
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
  c.window = j.value("window", c.window);
  c.init_range = j.value("init_range", c.init_range);
  return c;
}

namespace detail {

// out = b + W x, W row-major (rows x cols).
template <class S>
std::vector<S> affine(std::span<const S> w, std::span<const S> b, std::span<const S> x, std::size_t rows,
                      std::size_t cols) {
  std::vector<S> out(b.begin(), b.begin() + static_cast<std::ptrdiff_t>(rows));
  for (std::size_t i = 0; i < rows; ++i) {
    S acc = out[i];
    for (std::size_t j = 0; j < cols; ++j) acc = acc + w[i * cols + j] * x[j];
    out[i] = acc;
  }
  return out;
}

// out = W x without bias.
template <class S>
std::vector<S> matvec(std::span<const S> w, std::span<const S> x, std::size_t rows, std::size_t cols) {
  std::vector<S> out;
  out.reserve(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    S acc = w[i * cols] * x[0];
    for (std::size_t j = 1; j < cols; ++j) acc = acc + w[i * cols + j] * x[j];
    out.push_back(acc);
  }
  return out;
}

}  // namespace detail

/// Prefix -> Q-row model with either a tanh recurrent cell or an MLP over a
/// fixed window of the most recent tokens. The empty prefix is represented
/// by a learned start embedding, which also pads short MLP windows.
class QModel {
 public:
  QModel(ModelConfig config, std::size_t vocab_size, std::size_t t_max)
      : config_(config), vocab_size_(vocab_size), t_max_(t_max), layout_(std::make_shared<Layout>()) {
    require(config_.embed_dim >= 1 && config_.hidden_dim >= 1, "model dims must be >= 1");
    require(vocab_size_ >= 2, "vocab size must be >= 2");
    require(t_max_ >= 1, "t_max must be >= 1");
    const std::size_t d = config_.embed_dim;
    const std::size_t h = config_.hidden_dim;
    auto layout = std::make_shared<Layout>();
    layout->add("embed", {vocab_size_, d});
    layout->add("start", {d});
    if (config_.arch == Arch::recurrent_cell) {
      layout->add("cell.wx", {h, d});
      layout->add("cell.wh", {h, h});
      layout->add("cell.b", {h});
    } else {
      require(config_.window >= 1 && config_.window <= t_max_, "window must be in [1, t_max]");
      layout->add("mlp.w", {h, config_.window * d});
      layout->add("mlp.b", {h});
    }
    layout->add("head.w", {vocab_size_, h});
    layout->add("head.b", {vocab_size_});
    layout_ = std::move(layout);
  }

  const ModelConfig& config() const { return config_; }
  std::size_t vocab_size() const { return vocab_size_; }
  std::size_t t_max() const { return t_max_; }
  const std::shared_ptr<const Layout>& layout() const { return layout_; }

  /// Uniform in [-init_range, init_range]; the head bias stays zero so the
  /// initial policy is close to uniform.
  ParamVector init(std::uint64_t seed) const {
    ParamVector p(layout_);
    Rng rng(child_seed(seed, Stream::init));
    for (const Block& b : layout_->blocks()) {
      if (b.name == "head.b") continue;
      for (double& x : p[b.name]) x = rng.uniform(-config_.init_range, config_.init_range);
    }
    return p;
  }

  ParamVector zeros() const { return ParamVector(layout_); }

  /// Q-rows for the prefixes tokens[0:k], k = 0 .. n_rows-1.
  template <class S>
  std::vector<std::vector<S>> rows(const ParamView<S>& p, std::span<const TokenId> tokens, std::size_t n_rows) const {
    check_tokens(tokens, n_rows);
    const std::size_t d = config_.embed_dim;
    const std::size_t h = config_.hidden_dim;
    const std::size_t v = vocab_size_;
    const auto embed = p["embed"];
    const auto start = p["start"];
    const auto head_w = p["head.w"];
    const auto head_b = p["head.b"];
    auto input = [&](std::ptrdiff_t pos) {
      return pos < 0 ? start : embed.subspan(static_cast<std::size_t>(tokens[static_cast<std::size_t>(pos)]) * d, d);
    };

    std::vector<std::vector<S>> out;
    out.reserve(n_rows);
    if (config_.arch == Arch::recurrent_cell) {
      const auto wx = p["cell.wx"];
      const auto wh = p["cell.wh"];
      const auto b = p["cell.b"];
      std::vector<S> hidden;
      for (std::size_t k = 0; k < n_rows; ++k) {
        std::vector<S> z = detail::affine<S>(wx, b, input(static_cast<std::ptrdiff_t>(k) - 1), h, d);
        if (k > 0) {
          const std::vector<S> rec = detail::matvec<S>(wh, hidden, h, h);
          for (std::size_t i = 0; i < h; ++i) z[i] = z[i] + rec[i];
        }
        using std::tanh;
        for (S& x : z) x = tanh(x);
        hidden = std::move(z);
        out.push_back(detail::affine<S>(head_w, head_b, hidden, v, h));
      }
    } else {
      const std::size_t w = config_.window;
      const auto mw = p["mlp.w"];
      const auto mb = p["mlp.b"];
      for (std::size_t k = 0; k < n_rows; ++k) {
        std::vector<S> x;
        x.reserve(w * d);
        for (std::size_t j = 0; j < w; ++j) {
          const auto e = input(static_cast<std::ptrdiff_t>(k) - static_cast<std::ptrdiff_t>(w) + static_cast<std::ptrdiff_t>(j));
          x.insert(x.end(), e.begin(), e.end());
        }
        std::vector<S> z = detail::affine<S>(mw, mb, x, h, w * d);
        using std::tanh;
        for (S& a : z) a = tanh(a);
        out.push_back(detail::affine<S>(head_w, head_b, z, v, h));
      }
    }
    return out;
  }

  std::vector<Row> rows(const ParamVector& params, std::span<const TokenId> tokens, std::size_t n_rows) const {
    return rows<double>(view(params), tokens, n_rows);
  }

  /// Rows for every state visited while emitting `tokens`.
  std::vector<Row> rows(const ParamVector& params, std::span<const TokenId> tokens) const {
    return rows(params, tokens, tokens.size());
  }

  Row q_row(const ParamVector& params, std::span<const TokenId> prefix) const {
    require(prefix.size() < t_max_, "prefix length must be < t_max");
    return rows(params, prefix, prefix.size() + 1).back();
  }

  /// Forward activations kept for the hand-derived backward pass.
  struct Cache {
    Tokens tokens;
    std::vector<std::vector<double>> inputs;  // per row: cell input, or window concat
    std::vector<std::vector<double>> hidden;
    std::vector<Row> q;
  };

  Cache forward(const ParamVector& params, std::span<const TokenId> tokens, std::size_t n_rows) const {
    check_tokens(tokens, n_rows);
    Cache c;
    c.tokens.assign(tokens.begin(), tokens.end());
    const std::size_t d = config_.embed_dim;
    const std::size_t h = config_.hidden_dim;
    for (std::size_t k = 0; k < n_rows; ++k) {
      std::vector<double> x = gather_input(params, tokens, k);
      std::vector<double> z;
      if (config_.arch == Arch::recurrent_cell) {
        z = detail::affine<double>(params["cell.wx"], params["cell.b"], x, h, d);
        if (k > 0) {
          const auto rec = detail::matvec<double>(params["cell.wh"], c.hidden.back(), h, h);
          for (std::size_t i = 0; i < h; ++i) z[i] += rec[i];
        }
      } else {
        z = detail::affine<double>(params["mlp.w"], params["mlp.b"], x, h, config_.window * d);
      }
      for (double& a : z) a = std::tanh(a);
      c.q.push_back(detail::affine<double>(params["head.w"], params["head.b"], z, vocab_size_, h));
      c.inputs.push_back(std::move(x));
      c.hidden.push_back(std::move(z));
    }
    return c;
  }

  /// Accumulates d(loss)/d(params) into `grad` given d(loss)/d(q-row) per row.
  void backward(const ParamVector& params, const Cache& c, const std::vector<Row>& d_rows, GradVector& grad) const {
    const std::size_t d = config_.embed_dim;
    const std::size_t h = config_.hidden_dim;
    const std::size_t v = vocab_size_;
    const std::size_t n = c.q.size();
    const auto head_w = params["head.w"];
    auto g_head_w = grad["head.w"];
    auto g_head_b = grad["head.b"];
    auto g_embed = grad["embed"];
    auto g_start = grad["start"];

    auto scatter_input = [&](std::ptrdiff_t pos, std::span<const double> dx) {
      if (pos < 0) {
        for (std::size_t i = 0; i < d; ++i) g_start[i] += dx[i];
      } else {
        const std::size_t tok = static_cast<std::size_t>(c.tokens[static_cast<std::size_t>(pos)]);
        for (std::size_t i = 0; i < d; ++i) g_embed[tok * d + i] += dx[i];
      }
    };

    std::vector<double> carry(h, 0.0);
    for (std::size_t kk = n; kk-- > 0;) {
      const Row& dq = d_rows[kk];
      const std::vector<double>& hid = c.hidden[kk];
      std::vector<double> dh = carry;
      for (std::size_t a = 0; a < v; ++a) {
        if (dq[a] == 0.0) continue;
        g_head_b[a] += dq[a];
        for (std::size_t i = 0; i < h; ++i) {
          g_head_w[a * h + i] += dq[a] * hid[i];
          dh[i] += head_w[a * h + i] * dq[a];
        }
      }
      std::vector<double> dz(h);
      for (std::size_t i = 0; i < h; ++i) dz[i] = dh[i] * (1.0 - hid[i] * hid[i]);

      const std::vector<double>& x = c.inputs[kk];
      if (config_.arch == Arch::recurrent_cell) {
        const auto wx = params["cell.wx"];
        const auto wh = params["cell.wh"];
        auto g_wx = grad["cell.wx"];
        auto g_wh = grad["cell.wh"];
        auto g_b = grad["cell.b"];
        std::vector<double> dx(d, 0.0);
        std::fill(carry.begin(), carry.end(), 0.0);
        for (std::size_t i = 0; i < h; ++i) {
          if (dz[i] == 0.0) continue;
          g_b[i] += dz[i];
          for (std::size_t j = 0; j < d; ++j) {
            g_wx[i * d + j] += dz[i] * x[j];
            dx[j] += wx[i * d + j] * dz[i];
          }
          if (kk > 0) {
            const std::vector<double>& prev = c.hidden[kk - 1];
            for (std::size_t j = 0; j < h; ++j) {
              g_wh[i * h + j] += dz[i] * prev[j];
              carry[j] += wh[i * h + j] * dz[i];
            }
          }
        }
        scatter_input(static_cast<std::ptrdiff_t>(kk) - 1, dx);
      } else {
        const std::size_t w = config_.window;
        const std::size_t cols = w * d;
        const auto mw = params["mlp.w"];
        auto g_mw = grad["mlp.w"];
        auto g_mb = grad["mlp.b"];
        std::vector<double> dx(cols, 0.0);
        for (std::size_t i = 0; i < h; ++i) {
          if (dz[i] == 0.0) continue;
          g_mb[i] += dz[i];
          for (std::size_t j = 0; j < cols; ++j) {
            g_mw[i * cols + j] += dz[i] * x[j];
            dx[j] += mw[i * cols + j] * dz[i];
          }
        }
        for (std::size_t j = 0; j < w; ++j) {
          scatter_input(static_cast<std::ptrdiff_t>(kk) - static_cast<std::ptrdiff_t>(w) + static_cast<std::ptrdiff_t>(j),
                        std::span<const double>(dx).subspan(j * d, d));
        }
      }
    }
  }

 private:
  void check_tokens(std::span<const TokenId> tokens, std::size_t n_rows) const {
    require(n_rows <= tokens.size() + 1, "more rows requested than prefixes available");
    require(n_rows <= t_max_, "prefix length must be < t_max");
    for (std::size_t i = 0; i + 1 < n_rows; ++i) {
      require(tokens[i] >= 0 && static_cast<std::size_t>(tokens[i]) < vocab_size_,
              "invalid token id " + std::to_string(tokens[i]));
    }
  }

  std::vector<double> gather_input(const ParamVector& params, std::span<const TokenId> tokens, std::size_t k) const {
    const std::size_t d = config_.embed_dim;
    const auto embed = params["embed"];
    const auto start = params["start"];
    auto input = [&](std::ptrdiff_t pos) {
      return pos < 0 ? start : embed.subspan(static_cast<std::size_t>(tokens[static_cast<std::size_t>(pos)]) * d, d);
    };
    if (config_.arch == Arch::recurrent_cell) {
      const auto e = input(static_cast<std::ptrdiff_t>(k) - 1);
      return {e.begin(), e.end()};
    }
    std::vector<double> x;
    for (std::size_t j = 0; j < config_.window; ++j) {
      const auto e = input(static_cast<std::ptrdiff_t>(k) - static_cast<std::ptrdiff_t>(config_.window) + static_cast<std::ptrdiff_t>(j));
      x.insert(x.end(), e.begin(), e.end());
    }
    return x;
  }

  ModelConfig config_;
  std::size_t vocab_size_;
  std::size_t t_max_;
  std::shared_ptr<const Layout> layout_;
};

/// Slow copy of the live parameters used for regression targets.
struct TargetModel {
  ParamVector params;
  double rho = 0.999;
};

/// target <- rho * target + (1 - rho) * live.
inline TargetModel polyak_update(TargetModel target, const ParamVector& live) {
  if (!target.params.congruent(live)) fail(ErrorKind::invalid_argument, "polyak_update: shape mismatch");
  require(target.rho >= 0.0 && target.rho <= 1.0, "rho must be in [0, 1]");
  auto t = target.params.flat();
  const auto x = live.flat();
  const double rho = target.rho;
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rho * t[i] + (1.0 - rho) * x[i];
  return target;
}

// ------------------------------------------------------------ checkpoints

inline nlohmann::json params_to_json(const ParamVector& p) {
  nlohmann::json j = nlohmann::json::object();
  for (const Block& b : p.layout().blocks()) {
    const auto s = p[b.name];
    j[b.name] = std::vector<double>(s.begin(), s.end());
  }
  return j;
}

inline ParamVector params_from_json(const nlohmann::json& j, const std::shared_ptr<const Layout>& layout) {
  ParamVector p(layout);
  for (const Block& b : layout->blocks()) {
    if (!j.contains(b.name)) fail(ErrorKind::schema, "checkpoint is missing parameter block " + b.name);
    const auto values = j.at(b.name).get<std::vector<double>>();
    if (values.size() != b.size) fail(ErrorKind::schema, "checkpoint block " + b.name + " has the wrong size");
    std::copy(values.begin(), values.end(), p[b.name].begin());
  }
  if (j.size() != layout->blocks().size()) fail(ErrorKind::schema, "checkpoint has unexpected parameter blocks");
  return p;
}

}  // namespace sqlgen
