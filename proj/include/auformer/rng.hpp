#pragma once

#include <cmath>
#include <cstdint>

namespace auf {

// splitmix64: tiny, well-mixed, and identical on every platform.
// All randomness in the project flows through this generator so that
// (seed, shape, scheme) -> bit-identical buffers everywhere.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform in (0, 1); safe as a log/Box-Muller argument.
  double next_open() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller (one value per call, no cached state,
  // so streams stay position-independent).
  double next_normal() {
    double u = next_open();
    double v = next_open();
    return std::sqrt(-2.0 * std::log(u)) * std::cos(2.0 * M_PI * v);
  }

  // Normal(0, sigma) truncated to [-2 sigma, 2 sigma] by rejection.
  double next_trunc_normal(double sigma) {
    for (;;) {
      double z = next_normal();
      if (z >= -2.0 && z <= 2.0) return z * sigma;
    }
  }

  // Uniform integer in [0, n).
  uint64_t next_below(uint64_t n) { return next_u64() % n; }

  // Derives an independent stream, e.g. per-sample from (seed, id).
  static uint64_t derive(uint64_t seed, uint64_t stream) {
    Rng r(seed ^ (0x517cc1b727220a95ULL * (stream + 1)));
    return r.next_u64();
  }

 private:
  uint64_t state_;
};

}  // namespace auf
