#pragma once

#include <cstdint>
#include <random>

namespace redae {

/// Deterministic random source.
///
/// Raw bits come from std::mt19937_64, whose output sequence is fixed by the
/// C++ standard, so a seed yields the same 64-bit stream with every compiler.
/// The real-valued helpers are implemented here rather than with
/// <random>'s distributions, which are implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  /// Independent stream for a sub-task (per-sample augmentation, etc).
  static Rng derive(std::uint64_t seed, std::uint64_t stream);

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Unbiased integer in [0, bound).
  std::uint64_t below(std::uint64_t bound);

  bool bernoulli(double p) { return uniform() < p; }

  /// Standard normal via Box-Muller (one draw per call).
  double normal();

  double normal(double mean, double stddev) {
    return mean + stddev * normal();
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace redae
