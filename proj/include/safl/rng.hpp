#pragma once

#include <cmath>
#include <cstdint>
#include <iosfwd>
#include <limits>
#include <random>

namespace safl {

// Deterministic RNG. The uniform/normal mappings are spelled out here rather
// than taken from <random> distributions, which are implementation-defined;
// this keeps runs bitwise reproducible for a given seed on any platform.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Inclusive range, rejection-sampled so the draw is unbiased.
  int uniform_int(int lo, int hi) {
    const uint64_t span = static_cast<uint64_t>(hi) - static_cast<uint64_t>(lo) + 1;
    const uint64_t max = std::numeric_limits<uint64_t>::max();
    const uint64_t limit = max - max % span;
    uint64_t v;
    do {
      v = next_u64();
    } while (v >= limit);
    return lo + static_cast<int>(v % span);
  }

  // Uniform index into [0, n).
  size_t index(size_t n) { return static_cast<size_t>(uniform_int(0, static_cast<int>(n) - 1)); }

  // Standard normal, Box-Muller, one value per call.
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  // Engine state as text, for scene snapshots.
  friend std::ostream& operator<<(std::ostream& os, const Rng& r) { return os << r.gen_; }
  friend std::istream& operator>>(std::istream& is, Rng& r) { return is >> r.gen_; }

 private:
  std::mt19937_64 gen_;
};

}  // namespace safl
