#pragma once

#include <cstdint>
#include <random>

namespace gfm {

// Seeded generator with distribution code written out explicitly, so draws are
// identical across standard-library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  bool bernoulli(double p) { return uniform() < p; }

  double normal();

  // Normal(0, std) resampled until it falls within +-2 std.
  double trunc_normal(double std);

  // Independent child stream; the parent state is not advanced.
  Rng fork(std::uint64_t stream) const;

 private:
  std::mt19937_64 engine_;
};

}  // namespace gfm
