#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "sqlgen/error.hpp"
#include "sqlgen/params.hpp"

namespace sqlgen {

enum class OptimizerKind { sgd, adam };

inline std::string to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }

struct OptimizerState {
  std::vector<double> m;
  std::vector<double> v;
  long long t = 0;
};

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One descent step in place. sgd: theta -= lr * g. adam: bias-corrected
/// first/second moment scaling.
inline void sgd_update(ParamVector& params, const GradVector& grad, double lr, OptimizerKind kind,
                       OptimizerState& state, const AdamHyper& hyper = {}) {
  if (!params.congruent(grad)) fail(ErrorKind::invalid_argument, "sgd_update: shape mismatch");
  auto x = params.flat();
  const auto g = grad.flat();
  if (kind == OptimizerKind::sgd) {
    for (std::size_t i = 0; i < x.size(); ++i) x[i] -= lr * g[i];
    return;
  }
  if (state.m.size() != x.size()) {
    state.m.assign(x.size(), 0.0);
    state.v.assign(x.size(), 0.0);
    state.t = 0;
  }
  ++state.t;
  const double c1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < x.size(); ++i) {
    state.m[i] = hyper.beta1 * state.m[i] + (1.0 - hyper.beta1) * g[i];
    state.v[i] = hyper.beta2 * state.v[i] + (1.0 - hyper.beta2) * g[i] * g[i];
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    x[i] -= lr * m_hat / (std::sqrt(v_hat) + hyper.eps);
  }
}

}  // namespace sqlgen
