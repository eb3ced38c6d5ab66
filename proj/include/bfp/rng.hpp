#pragma once

#include <cstdint>
#include <random>

namespace bfp {

// Thin wrapper over mt19937 with hand-rolled draw helpers. The standard
// fixes the engine's output sequence but not the distributions, so the
// helpers below keep results identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(static_cast<std::uint32_t>(seed)) {}

  std::uint32_t next_u32() { return engine_(); }

  // Uniform in [0, 1).
  double uniform() {
    return next_u32() * (1.0 / 4294967296.0);
  }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  std::uint32_t below(std::uint32_t n) {
    return static_cast<std::uint32_t>(uniform() * n) % n;
  }

  bool coin(double p = 0.5) { return uniform() < p; }

 private:
  std::mt19937 engine_;
};

}  // namespace bfp
