#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace hetcomm {

// splitmix64 (Steele, Lea & Flood reference constants). Every seeded
// procedure in this project (dataset synthesis, epoch shuffles, test
// generators) draws from this generator so that runs are reproducible
// bit-for-bit across platforms and implementations.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, bound); bound must be nonzero. Plain modulo reduction:
  // the tiny bias is irrelevant next to the reproducibility contract.
  std::uint64_t next_below(std::uint64_t bound) { return next() % bound; }

  // Uniform in [0, 1) with 53 random bits.
  double next_double() {
    return static_cast<double>(next() >> 11) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller; generates pairs and caches the second.
  double next_gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    // u1 in (0, 1] keeps the log finite.
    double u1 = static_cast<double>((next() >> 11) + 1) * 0x1.0p-53;
    double u2 = next_double();
    double radius = std::sqrt(-2.0 * std::log(u1));
    double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// In-place Fisher-Yates shuffle driven by SplitMix64: for i = n-1 .. 1,
// swap v[i] with v[g.next_below(i + 1)].
template <typename T>
void fisher_yates_shuffle(std::vector<T>& v, SplitMix64& g) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::swap(v[i - 1], v[g.next_below(i)]);
  }
}

}  // namespace hetcomm
