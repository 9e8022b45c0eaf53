#ifndef MMER_RNG_HPP
#define MMER_RNG_HPP

#include <cstdint>
#include <random>
#include <span>
#include <string_view>

namespace mmer {

/// Deterministic generator: std::mt19937_64 (fully specified by the C++
/// standard) with all derived draws computed here rather than through the
/// implementation-defined <random> distributions.
///
///   uniform()   53 high bits of one 64-bit draw, in [0, 1)
///   normal()    Box-Muller on two uniform() draws, no caching
///   below(n)    rejection sampling on 64-bit draws
///   fork(name)  independent stream seeded by splitmix64(seed ^ fnv1a(name))
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return engine_(); }
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal(double mean = 0.0, double stddev = 1.0);
  std::uint64_t below(std::uint64_t n);

  Rng fork(std::string_view name) const;

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace mmer

#endif  // MMER_RNG_HPP
