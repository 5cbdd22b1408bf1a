#include "mim/schedule.h"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace mim {

double mask_rate_density(double r) {
  if (!(r >= 0.0 && r < 1.0)) return 0.0;
  return 2.0 / std::numbers::pi / std::sqrt(1.0 - r * r);
}

double mask_rate_cdf(double r) {
  if (r <= 0.0) return 0.0;
  if (r >= 1.0) return 1.0;
  return 2.0 / std::numbers::pi * std::asin(r);
}

MaskRate sample_mask_rate(double u) {
  if (!(u >= 0.0 && u <= 1.0)) {
    throw std::invalid_argument("sample_mask_rate: u must lie in [0, 1], got " +
                                std::to_string(u));
  }
  // sin(π/2) is exactly 1 in double, so both boundaries are reproduced.
  return make_rate(std::sin(std::numbers::pi * u / 2.0));
}

MaskRate sample_mask_rate(Rng& rng) { return sample_mask_rate(rng.uniform()); }

int discretize(double r) {
  if (!(r >= 0.0 && r <= 1.0)) {
    throw std::invalid_argument("discretize: rate must lie in [0, 1], got " +
                                std::to_string(r));
  }
  return std::min(static_cast<int>(std::floor(r * kRateLevels)), kRateLevels - 1);
}

MaskRate make_rate(double r) { return {r, discretize(r)}; }

InferenceSchedule cosine_schedule(int steps, std::int64_t tokens) {
  if (steps < 1) throw std::invalid_argument("cosine_schedule: steps must be >= 1");
  if (steps > tokens) {
    throw std::invalid_argument("cosine_schedule: " + std::to_string(steps) +
                                " steps cannot unmask " + std::to_string(tokens) +
                                " tokens at one or more per step");
  }
  InferenceSchedule s;
  s.steps = steps;
  s.tokens = tokens;
  std::vector<std::int64_t> floor_m(steps + 1);
  for (int t = 0; t <= steps; ++t) {
    const double g = std::cos(std::numbers::pi * t / (2.0 * steps));
    s.gamma.push_back(t == steps ? 0.0 : g);
    floor_m[t] = t == 0 ? tokens
                        : t == steps ? 0
                                     : static_cast<std::int64_t>(std::floor(g * tokens));
  }
  s.unmask.resize(steps);
  for (int t = 1; t <= steps; ++t) s.unmask[t - 1] = floor_m[t - 1] - floor_m[t];
  for (int t = 0; t < steps; ++t) {
    while (s.unmask[t] < 1) {
      auto largest = std::max_element(s.unmask.begin(), s.unmask.end());
      --*largest;
      ++s.unmask[t];
    }
  }
  s.masked.resize(steps + 1);
  s.masked[0] = tokens;
  for (int t = 1; t <= steps; ++t) s.masked[t] = s.masked[t - 1] - s.unmask[t - 1];
  return s;
}

std::vector<double> sinusoidal_embed(double value, int dim, double max_period) {
  if (dim <= 0 || dim % 2 != 0) {
    throw std::invalid_argument("sinusoidal_embed: dim must be positive and even, got " +
                                std::to_string(dim));
  }
  const int half = dim / 2;
  const double lowest = 2.0 * std::numbers::pi / max_period;
  std::vector<double> out(dim);
  for (int i = 0; i < half; ++i) {
    const double e = half == 1 ? 1.0 : static_cast<double>(i) / (half - 1);
    const double w = std::pow(lowest, e);
    out[2 * i] = std::sin(value * w);
    out[2 * i + 1] = std::cos(value * w);
  }
  return out;
}

}  // namespace mim
