#pragma once

#include <cstdint>

namespace odseg {

/// Counter-based generator: the n-th draw is a pure function of
/// (seed, stream, n), so results never depend on call interleaving across
/// samples or platforms.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0) noexcept;

  std::uint64_t next_u64() noexcept;
  /// Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept;
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n) noexcept;
  bool bernoulli(double p) noexcept { return uniform() < p; }
  /// Standard normal via Box-Muller (both values of a pair are consumed).
  double normal() noexcept;

  std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Mixes several integers into one seed (seed, sample index, epoch, ...).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) noexcept;

std::uint64_t splitmix64(std::uint64_t x) noexcept;

}  // namespace odseg
