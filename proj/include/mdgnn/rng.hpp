#pragma once

#include <cmath>
#include <cstdint>

namespace mdgnn {

/// Deterministic PRNG (splitmix64 core) so fixtures are reproducible across
/// platforms independent of libstdc++ distribution internals.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed ^ 0x9e3779b97f4a7c15ULL) {
    // decorrelate small seeds
    next_u64();
    next_u64();
  }

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller (one value per call, fully deterministic).
  double normal() {
    double u1 = uniform(), u2 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  /// Derive an independent child stream (for per-draw / per-worker seeding).
  Rng fork(std::uint64_t stream) const {
    Rng r(state_ ^ (0xd1342543de82ef95ULL * (stream + 1)));
    return r;
  }

 private:
  std::uint64_t state_;
};

}  // namespace mdgnn
