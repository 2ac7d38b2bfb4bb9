#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

namespace tased {

/// xoshiro256** (Blackman & Vigna), seeded through splitmix64.
///
/// Every random draw in the library flows from an instance of this class so
/// results are reproducible across platforms and standard libraries: the
/// distributions below are implemented here rather than taken from <random>,
/// whose algorithms are implementation-defined.
class Rng {
 public:
  using State = std::array<std::uint64_t, 4>;

  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  /// Uniform integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n);
  /// Standard normal via Box-Muller (no cached second value, so the state is
  /// the whole story).
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Independent child generator; deterministic function of this state.
  Rng split();

  const State& state() const { return state_; }
  void set_state(const State& state) { state_ = state; }

  /// k distinct indices from [0, n) in draw order (partial Fisher-Yates).
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

 private:
  State state_{};
};

std::uint64_t splitmix64(std::uint64_t& x);

/// Stateless mixing of a base seed with a stream id, used to derive per-item
/// child seeds so parallel evaluation stays deterministic.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

}  // namespace tased
