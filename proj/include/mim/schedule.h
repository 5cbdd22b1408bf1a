#pragma once

#include <cstdint>
#include <vector>

#include "mim/rng.h"

namespace mim {

inline constexpr int kRateLevels = 1000;

struct MaskRate {
  double r = 0;
  int level = 0;
};

/// p(r) = 2/π · (1 - r²)^(-1/2) on [0, 1).
double mask_rate_density(double r);
/// F(r) = 2/π · arcsin(r)
double mask_rate_cdf(double r);

/// Inverse-CDF draw, r = sin(π·u/2). Throws std::invalid_argument outside
/// [0, 1].
MaskRate sample_mask_rate(double u);
MaskRate sample_mask_rate(Rng& rng);

/// floor(r·1000) clamped to 999.
int discretize(double r);
MaskRate make_rate(double r);

struct InferenceSchedule {
  int steps = 0;
  std::int64_t tokens = 0;
  std::vector<double> gamma;         // T + 1 entries, cos(π t / 2T)
  std::vector<std::int64_t> masked;  // m_t, T + 1 entries, m_0 = N, m_T = 0
  std::vector<std::int64_t> unmask;  // n_t for t = 1..T, stored at t - 1
};

/// m_t = floor(γ_t·N); steps that would unmask nothing borrow one token at a
/// time from the currently largest step (earliest on ties).
InferenceSchedule cosine_schedule(int steps, std::int64_t tokens);

/// Interleaved [sin(v·ω_0), cos(v·ω_0), sin(v·ω_1), ...] with ω_i spaced
/// geometrically from 1 down to 2π/max_period.
std::vector<double> sinusoidal_embed(double value, int dim,
                                     double max_period = 10000.0);

}  // namespace mim
