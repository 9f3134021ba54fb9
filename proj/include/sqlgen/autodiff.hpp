#pragma once

// Reverse-mode differentiation over a small primitive set: affine arithmetic,
// tanh, exp, log. Softmax, log-sum-exp, squared error and masked means are
// composed from these in numeric.hpp and the objectives. Each backward()
// call owns its tape, so concurrent calls on distinct parameters are safe.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "sqlgen/error.hpp"
#include "sqlgen/params.hpp"
#include "sqlgen/rng.hpp"

namespace sqlgen::ad {

class Tape {
 public:
  struct Node {
    double value = 0.0;
    std::array<int, 2> parent{-1, -1};
    std::array<double, 2> partial{0.0, 0.0};
  };

  int push(double value, const char* op, int p0 = -1, double d0 = 0.0, int p1 = -1,
           double d1 = 0.0) {
    if (!std::isfinite(value) || !std::isfinite(d0) || !std::isfinite(d1)) {
      fail(ErrorKind::numeric, std::string("non-finite value in primitive '") + op + "'");
    }
    nodes_.push_back(Node{value, {p0, p1}, {d0, d1}});
    return static_cast<int>(nodes_.size()) - 1;
  }

  double value(int i) const { return nodes_[static_cast<std::size_t>(i)].value; }
  std::size_t size() const { return nodes_.size(); }
  void reserve(std::size_t n) { nodes_.reserve(n); }

  /// Adjoints of every node with respect to `output`.
  std::vector<double> adjoints(int output) const {
    std::vector<double> adj(nodes_.size(), 0.0);
    adj[static_cast<std::size_t>(output)] = 1.0;
    for (int i = output; i >= 0; --i) {
      const Node& n = nodes_[static_cast<std::size_t>(i)];
      const double a = adj[static_cast<std::size_t>(i)];
      if (a == 0.0) continue;
      for (int k = 0; k < 2; ++k) {
        if (n.parent[k] >= 0) adj[static_cast<std::size_t>(n.parent[k])] += a * n.partial[k];
      }
    }
    return adj;
  }

 private:
  std::vector<Node> nodes_;
};

class Var {
 public:
  Var() = default;
  Var(Tape* tape, int index) : tape_(tape), index_(index) {}

  double value() const { return tape_->value(index_); }
  int index() const { return index_; }
  Tape* tape() const { return tape_; }

 private:
  Tape* tape_ = nullptr;
  int index_ = -1;
};

inline Var variable(Tape& tape, double value) { return Var(&tape, tape.push(value, "leaf")); }

inline Var operator+(Var a, Var b) {
  return Var(a.tape(), a.tape()->push(a.value() + b.value(), "add", a.index(), 1.0, b.index(), 1.0));
}
inline Var operator-(Var a, Var b) {
  return Var(a.tape(), a.tape()->push(a.value() - b.value(), "sub", a.index(), 1.0, b.index(), -1.0));
}
inline Var operator*(Var a, Var b) {
  return Var(a.tape(),
             a.tape()->push(a.value() * b.value(), "mul", a.index(), b.value(), b.index(), a.value()));
}
inline Var operator/(Var a, Var b) {
  const double inv = 1.0 / b.value();
  return Var(a.tape(), a.tape()->push(a.value() * inv, "div", a.index(), inv, b.index(),
                                      -a.value() * inv * inv));
}
inline Var operator-(Var a) { return Var(a.tape(), a.tape()->push(-a.value(), "neg", a.index(), -1.0)); }

inline Var operator+(Var a, double c) { return Var(a.tape(), a.tape()->push(a.value() + c, "add", a.index(), 1.0)); }
inline Var operator+(double c, Var a) { return a + c; }
inline Var operator-(Var a, double c) { return Var(a.tape(), a.tape()->push(a.value() - c, "sub", a.index(), 1.0)); }
inline Var operator-(double c, Var a) { return Var(a.tape(), a.tape()->push(c - a.value(), "sub", a.index(), -1.0)); }
inline Var operator*(Var a, double c) { return Var(a.tape(), a.tape()->push(a.value() * c, "mul", a.index(), c)); }
inline Var operator*(double c, Var a) { return a * c; }
inline Var operator/(Var a, double c) { return a * (1.0 / c); }

inline Var exp(Var a) {
  const double e = std::exp(a.value());
  return Var(a.tape(), a.tape()->push(e, "exp", a.index(), e));
}
inline Var log(Var a) {
  return Var(a.tape(), a.tape()->push(std::log(a.value()), "log", a.index(), 1.0 / a.value()));
}
inline Var tanh(Var a) {
  const double t = std::tanh(a.value());
  return Var(a.tape(), a.tape()->push(t, "tanh", a.index(), 1.0 - t * t));
}

inline double value_of(const Var& v) { return v.value(); }

}  // namespace sqlgen::ad

namespace sqlgen {

using ad::value_of;

/// Evaluates `loss_fn(ParamView<ad::Var>)` on a fresh tape and returns the
/// loss with its exact gradient. `loss_fn` must be generic over the scalar.
template <class LossFn>
std::pair<double, GradVector> backward(LossFn&& loss_fn, const ParamVector& params) {
  ad::Tape tape;
  const std::size_t n = params.total_count();
  std::vector<ad::Var> leaves;
  leaves.reserve(n);
  for (double v : params.flat()) leaves.push_back(ad::variable(tape, v));
  ad::Var out = loss_fn(ParamView<ad::Var>(params.layout(), leaves));
  GradVector grad = GradVector::zeros_like(params);
  if (out.tape() == nullptr) return {value_of(out), grad};
  const std::vector<double> adj = tape.adjoints(out.index());
  for (std::size_t i = 0; i < n; ++i) grad.flat()[i] = adj[static_cast<std::size_t>(leaves[i].index())];
  return {out.value(), grad};
}

/// Max over probed coordinates of |analytic - numeric| / max(1, |numeric|),
/// numeric being the central difference with the given step. Coordinates are
/// drawn without replacement (all of them when n_probes >= count).
template <class ValueFn>
double finite_diff_check(ValueFn&& value_fn, const ParamVector& params, const GradVector& analytic,
                         std::size_t n_probes, double step, std::uint64_t seed = 0) {
  require(n_probes >= 1, "finite_diff_check needs n_probes >= 1");
  require(step > 0.0, "finite_diff_check needs step > 0");
  require(params.congruent(analytic), "gradient is not congruent with parameters");
  std::vector<std::size_t> coords(params.total_count());
  for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
  Rng rng(seed);
  for (std::size_t i = coords.size(); i > 1; --i) std::swap(coords[i - 1], coords[rng.index(i)]);
  coords.resize(std::min(n_probes, coords.size()));

  ParamVector probe = params;
  double worst = 0.0;
  for (std::size_t i : coords) {
    const double x = params.flat()[i];
    probe.flat()[i] = x + step;
    const double up = value_fn(probe);
    probe.flat()[i] = x - step;
    const double down = value_fn(probe);
    probe.flat()[i] = x;
    const double numeric = (up - down) / (2.0 * step);
    const double err = std::abs(analytic.flat()[i] - numeric) / std::max(1.0, std::abs(numeric));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace sqlgen
