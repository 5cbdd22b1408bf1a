#include <algorithm>
#include <cmath>
#include <numbers>

#include "doctest.h"
#include "mim/schedule.h"

using namespace mim;

namespace {

// Composite Simpson on [a, b].
template <typename F>
double simpson(F f, double a, double b, int n = 20000) {
  const double h = (b - a) / n;
  double s = f(a) + f(b);
  for (int i = 1; i < n; ++i) s += f(a + i * h) * (i % 2 ? 4 : 2);
  return s * h / 3;
}

double integrated_cdf(double r) {
  return simpson([](double x) { return mask_rate_density(x); }, 0.0, r);
}

}  // namespace

TEST_CASE("sample_mask_rate boundaries and midpoint") {
  CHECK(sample_mask_rate(0.0).r == 0.0);
  CHECK(sample_mask_rate(1.0).r == 1.0);
  CHECK(sample_mask_rate(1.0).level == 999);
  const double r = sample_mask_rate(0.5).r;
  CHECK(std::abs(r - std::sin(std::numbers::pi / 4)) < 1e-9);

  // Invert the integrated density by bisection, independently of the
  // closed form.
  double lo = 0, hi = 0.99;
  for (int i = 0; i < 60; ++i) {
    const double mid = (lo + hi) / 2;
    (integrated_cdf(mid) < 0.5 ? lo : hi) = mid;
  }
  CHECK(std::abs(lo - r) < 1e-6);
  CHECK_THROWS_AS(sample_mask_rate(-0.01), std::invalid_argument);
  CHECK_THROWS_AS(sample_mask_rate(1.01), std::invalid_argument);
}

TEST_CASE("density at zero") {
  CHECK(mask_rate_density(0.0) == doctest::Approx(0.63662).epsilon(1e-5));
}

TEST_CASE("closed-form CDF agrees with integrated density") {
  for (double r : {0.1, 0.3, 0.5, 0.8, 0.95}) {
    CHECK(std::abs(mask_rate_cdf(r) - integrated_cdf(r)) < 1e-7);
  }
}

TEST_CASE("KS distance and mean of 1e5 draws") {
  Rng rng(1234);
  std::vector<double> xs(100000);
  for (auto& x : xs) x = sample_mask_rate(rng).r;
  std::sort(xs.begin(), xs.end());
  double d = 0;
  const double n = static_cast<double>(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double f = mask_rate_cdf(xs[i]);
    d = std::max({d, std::abs(f - i / n), std::abs((i + 1) / n - f)});
  }
  CHECK(d < 0.01);

  // mean oracle: ∫ r p(r) dr with r = sin θ removes the endpoint singularity
  const double analytic = simpson(
      [](double th) { return std::sin(th) * 2.0 / std::numbers::pi; }, 0.0,
      std::numbers::pi / 2);
  CHECK(std::abs(analytic - 2.0 / std::numbers::pi) < 1e-9);
  double mean = 0;
  for (double x : xs) mean += x;
  mean /= n;
  CHECK(std::abs(mean - analytic) < 0.005);
}

TEST_CASE("discretize") {
  CHECK(discretize(0.0) == 0);
  CHECK(discretize(1.0) == 999);
  CHECK(discretize(0.5) == 500);
  CHECK_THROWS_AS(discretize(1.5), std::invalid_argument);
  CHECK_THROWS_AS(discretize(-0.1), std::invalid_argument);
  for (int level = 0; level < kRateLevels; ++level) {
    CHECK(discretize((level + 0.5) / 1000.0) == level);
  }
}

TEST_CASE("cosine schedule examples") {
  auto one = cosine_schedule(1, 64);
  REQUIRE(one.unmask.size() == 1);
  CHECK(one.unmask[0] == 64);

  auto s = cosine_schedule(8, 64);
  std::vector<std::int64_t> table;
  for (int t = 0; t <= 8; ++t) {
    table.push_back(static_cast<std::int64_t>(
        std::floor(std::cos(std::numbers::pi * t / 16.0) * 64)));
  }
  CHECK(table[4] == 45);
  CHECK(s.masked[4] == 45);
  CHECK(s.gamma[4] == doctest::Approx(0.70711).epsilon(1e-5));
  CHECK_THROWS_AS(cosine_schedule(65, 64), std::invalid_argument);
  CHECK_THROWS_AS(cosine_schedule(0, 64), std::invalid_argument);
}

TEST_CASE("cosine schedule postconditions over random (T, N)") {
  Rng rng(7);
  for (int trial = 0; trial < 2000; ++trial) {
    const std::int64_t n = 1 + static_cast<std::int64_t>(rng.below(600));
    const int t = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
    auto s = cosine_schedule(t, n);
    std::int64_t total = 0;
    for (auto v : s.unmask) {
      CHECK(v >= 1);
      total += v;
    }
    CHECK(total == n);
    CHECK(s.masked.front() == n);
    CHECK(s.masked.back() == 0);
    for (int i = 1; i <= t; ++i) CHECK(s.masked[i] < s.masked[i - 1]);
  }
}

TEST_CASE("sinusoidal embedding") {
  auto zero = sinusoidal_embed(0.0, 16);
  for (int i = 0; i < 16; ++i) CHECK(zero[i] == (i % 2 ? 1.0 : 0.0));

  auto lowest = sinusoidal_embed(10000.0 / (2 * std::numbers::pi), 16);
  CHECK(std::abs(lowest[14] - std::sin(1.0L)) < 1e-12);

  for (double a = 0; a < 1000; a += 37.3) {
    auto ea = sinusoidal_embed(a, 32);
    auto eb = sinusoidal_embed(a + 0.5, 32);
    double d = 0;
    for (int i = 0; i < 32; ++i) d += (ea[i] - eb[i]) * (ea[i] - eb[i]);
    CHECK(d > 0);
  }
  CHECK_THROWS_AS(sinusoidal_embed(1.0, 7), std::invalid_argument);
}
