#pragma once

#include <cstdint>
#include <random>

namespace mim {

/// Deterministic random source. The engine is the standard's mt19937_64,
/// whose output sequence is fixed by the standard; all derived draws are
/// computed here rather than through std distributions (whose algorithms are
/// implementation-defined), so streams match across platforms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  /// Uniform integer in [0, n); n > 0. Rejection keeps it unbiased.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  /// Standard normal via Box-Muller (one draw per call).
  double normal();

  /// Independent child stream derived from this one.
  Rng fork() { return Rng(engine_() ^ 0x9E3779B97F4A7C15ULL); }

 private:
  std::mt19937_64 engine_;
};

}  // namespace mim
