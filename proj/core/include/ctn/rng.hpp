#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

namespace ctn {

/// Counter-based 64-bit generator: draw i is splitmix64_mix(seed + i * gamma)
/// with gamma = 0x9E3779B97F4A7C15. Only integer arithmetic feeds the raw
/// stream, so a given (seed, call sequence) yields the same bits everywhere.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed = 0) : seed_(seed) {}

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  /// Box-Muller; consumes two uniform draws.
  double normal(double mean = 0.0, double stddev = 1.0);
  /// Unbiased integer in [0, bound).
  std::uint64_t below(std::uint64_t bound);
  /// Uniformly random ordering of [0, n).
  std::vector<std::int64_t> permutation(std::int64_t n);

  template <class T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  /// Independent stream keyed by a label; does not advance this generator.
  SeededRng fork(std::string_view label) const;
  SeededRng fork(std::uint64_t stream) const;

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

std::uint64_t mix64(std::uint64_t x) noexcept;

}  // namespace ctn
