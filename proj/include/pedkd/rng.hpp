#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

namespace pedkd {

std::uint64_t fnv1a64(std::string_view bytes);
std::uint64_t splitmix64(std::uint64_t x);

/// Splittable PRNG. Every random draw in the project comes from a stream
/// derived from one 64-bit seed, so identical seeds give bit-identical runs.
/// Streams are derived by name or index; deriving never advances the parent.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), state_(splitmix64(seed)) {}

  Rng split(std::string_view name) const;
  Rng split(std::uint64_t index) const;
  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Box-Muller; no cached spare so draws stay position-independent.
  double normal(double mean = 0.0, double stddev = 1.0);
  std::size_t below(std::size_t n);
  bool bernoulli(double p) { return uniform() < p; }
  /// Index drawn with probability proportional to weights (weights sum to 1).
  std::size_t categorical(std::span<const double> probs);

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

 private:
  std::uint64_t seed_;
  std::uint64_t state_;
};

}  // namespace pedkd
