#pragma once

// Scalar-generic numerics shared by the double path and the autodiff tape.
// Generic code calls exp/log/tanh unqualified so that ADL picks the tape
// overloads for ad::Var and <cmath> for double.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

namespace sqlgen {

inline double value_of(double x) { return x; }

template <class S>
S log_sum_exp(std::span<const S> xs) {
  using std::exp;
  using std::log;
  double m = -std::numeric_limits<double>::infinity();
  for (const S& x : xs) m = std::max(m, value_of(x));
  S sum = exp(xs[0] - m);
  for (std::size_t i = 1; i < xs.size(); ++i) sum = sum + exp(xs[i] - m);
  return log(sum) + m;
}

template <class S>
S log_sum_exp(const std::vector<S>& xs) {
  return log_sum_exp(std::span<const S>(xs));
}

inline double max_of(std::span<const double> xs) {
  return *std::max_element(xs.begin(), xs.end());
}

/// log softmax(q)[a], i.e. q[a] - logsumexp(q).
template <class S>
S log_softmax_at(std::span<const S> q, std::size_t a) {
  return q[a] - log_sum_exp(q);
}

template <class S>
S log_softmax_at(const std::vector<S>& q, std::size_t a) {
  return log_softmax_at(std::span<const S>(q), a);
}

inline std::vector<double> softmax(std::span<const double> q) {
  const double m = max_of(q);
  std::vector<double> p(q.size());
  double z = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    p[i] = std::exp(q[i] - m);
    z += p[i];
  }
  for (double& x : p) x /= z;
  return p;
}

/// Index of the largest entry; ties go to the lowest index.
inline std::size_t argmax(std::span<const double> xs) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < xs.size(); ++i) {
    if (xs[i] > xs[best]) best = i;
  }
  return best;
}

inline bool all_finite(std::span<const double> xs) {
  return std::all_of(xs.begin(), xs.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace sqlgen
