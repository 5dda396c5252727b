#pragma once

#include <cstdint>

namespace railflow {

// SplitMix64. Hand-rolled so that seeded runs replay bit-identically on every
// platform; std::uniform_int_distribution output is implementation-defined.
class Rng {
 public:
  Rng() = default;
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Modulo bias is negligible for the small bounds used here.
  uint64_t bounded(uint64_t n) { return n == 0 ? 0 : next() % n; }

  // Inclusive range.
  int range(int lo, int hi) {
    return lo + static_cast<int>(bounded(static_cast<uint64_t>(hi - lo + 1)));
  }

  // Uniform in [0, 1).
  double unit() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  bool chance(double p) { return unit() < p; }

  uint64_t state() const { return state_; }

  friend bool operator==(const Rng&, const Rng&) = default;

 private:
  uint64_t state_ = 0x853c49e6748fea9bull;
};

}  // namespace railflow
