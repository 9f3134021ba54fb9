#pragma once

// Seeding scheme: one 64-bit run seed; every consumer draws from a child
// stream keyed by (purpose, step, index). Adding a new purpose never shifts
// the streams of existing ones, and a stream depends only on its key, so
// parallel rollouts and resumed runs reproduce the same draws.

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>

namespace sqlgen {

enum class Stream : std::uint64_t {
  init = 1,
  off_policy = 2,
  rollout = 3,
  eval = 4,
  gradcheck = 5,
  harness = 6,
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t child_seed(std::uint64_t seed, Stream stream, std::uint64_t step = 0,
                                std::uint64_t index = 0) {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ static_cast<std::uint64_t>(stream));
  h = splitmix64(h ^ step);
  return splitmix64(h ^ index);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform in [0, 1) with 53 random bits; identical across standard libraries.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n) {
    return static_cast<std::size_t>(uniform() * static_cast<double>(n));
  }

  /// Inverse-CDF draw from a probability vector; falls back to the last
  /// positive entry if rounding leaves the cumulative sum short of u.
  std::size_t categorical(std::span<const double> probs) {
    const double u = uniform();
    double acc = 0.0;
    std::size_t last = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      if (probs[i] <= 0.0) continue;
      acc += probs[i];
      last = i;
      if (u < acc) return i;
    }
    return last;
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace sqlgen
