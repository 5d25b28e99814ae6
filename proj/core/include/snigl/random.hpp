#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>

namespace snigl {

/// xoshiro256** seeded through splitmix64. All sampling helpers are written
/// here rather than with <random> distributions so streams are identical
/// across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  /// Independent stream for item `index` under `seed` (counter-based derivation).
  static Rng stream(std::uint64_t seed, std::uint64_t index);

  std::uint64_t next();

  /// Uniform in [0, 1).
  double uniform();
  /// Uniform in (0, 1).
  double uniform_open();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::size_t below(std::size_t n);
  /// Uniform integer in [lo, hi].
  std::size_t between(std::size_t lo, std::size_t hi) { return lo + below(hi - lo + 1); }
  double normal();
  bool bernoulli(double p) { return uniform() < p; }
  std::size_t categorical(std::span<const double> weights);

  template <typename It>
  void shuffle(It first, It last) {
    const auto n = static_cast<std::size_t>(last - first);
    for (std::size_t i = n; i > 1; --i) {
      using std::swap;
      swap(first[i - 1], first[below(i)]);
    }
  }

 private:
  std::uint64_t s_[4];
};

std::uint64_t splitmix64(std::uint64_t& state);

/// Mixes two words into a seed; used to derive per-purpose sub-seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt);

}  // namespace snigl
