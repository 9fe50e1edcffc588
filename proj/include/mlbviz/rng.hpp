#pragma once

#include <cstdint>

namespace mlbviz {

// SplitMix64. The stream is part of the dataset and init contracts, so the
// constants and the derived draws below must not change.
class Rng64 {
 public:
  explicit Rng64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    state_ += 0x9E3779B97F4B7C15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform in the open interval (0, 1).
  double uniform() { return (static_cast<double>(next() >> 11) + 0.5) * 0x1.0p-53; }

  // Uniform in the open interval (-a, a).
  double symmetric(double a) { return a * (2.0 * uniform() - 1.0); }

  // Integer in [0, n); n > 0.
  std::uint64_t below(std::uint64_t n) { return next() % n; }

  std::uint64_t state() const { return state_; }

 private:
  std::uint64_t state_;
};

}  // namespace mlbviz
