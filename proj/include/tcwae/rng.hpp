#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

namespace tcwae {

/// Well-known stream ids; each consumer of randomness owns one.
enum class Stream : std::uint64_t {
  init = 1,
  data_order = 2,
  noise = 3,
  permutation = 4,
  metrics = 5,
  prior = 6,
};

/// Counter-based generator: draw k of a stream is a pure function of
/// (seed, k), so results never depend on thread scheduling or platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0, std::uint64_t counter = 0)
      : seed_(seed), counter_(counter) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 bits of precision.
  double uniform();
  /// Standard normal (Box-Muller, consumes two draws).
  double normal();
  /// Uniform integer in [0, n); n must be positive.
  std::size_t uniform_index(std::size_t n);

  void fill_normal(std::span<double> out);

  /// Independent child stream; does not advance this generator.
  Rng split(std::uint64_t stream) const;
  Rng split(Stream stream) const { return split(static_cast<std::uint64_t>(stream)); }

  friend bool operator==(const Rng&, const Rng&) = default;

 private:
  std::uint64_t seed_;
  std::uint64_t counter_;
};

/// SplitMix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

}  // namespace tcwae
