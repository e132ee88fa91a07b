#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

namespace mixseq {

// Seeded random stream. Every stochastic operation takes one of these by
// reference; there is no global generator. Draw helpers avoid the
// implementation-defined std distributions so sequences are identical across
// standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  // Independent child stream keyed by `tag`. Deriving does not advance this
  // stream, so children can be created in any order.
  Rng derive(std::uint64_t tag) const;
  Rng derive(std::string_view tag) const;

  std::uint64_t next_u64() { return engine_(); }
  // Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);
  double normal();

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[below(i)]);
    }
  }

  // `count` distinct values from [0, n), in draw order.
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t count);

  std::uint64_t seed() const noexcept { return seed_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_normal_ = false;
  double spare_normal_ = 0.0;
};

inline Rng seeded_rng(std::uint64_t seed) { return Rng(seed); }

// SplitMix64 finalizer; used for stream derivation and hashing.
std::uint64_t mix64(std::uint64_t x);

}  // namespace mixseq
