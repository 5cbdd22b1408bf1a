#include "mim/grad_check.h"

#include <algorithm>
#include <cmath>

namespace mim {

GradCheckReport grad_check(const ScalarFn& fn, std::vector<Tensor64> inputs,
                           double tol, double h, std::size_t max_coords,
                           double floor) {
  for (auto& in : inputs) {
    in.set_requires_grad(true);
    in.zero_grad();
  }
  auto out = fn(inputs);
  if (out.numel() != 1) {
    throw ShapeError("grad_check: function must be scalar-valued, got " +
                     shape_str(out.shape()));
  }
  out.backward();

  std::vector<std::vector<double>> analytic;
  for (const auto& in : inputs) {
    std::vector<double> g(static_cast<std::size_t>(in.numel()), 0.0);
    auto src = in.grad();
    std::copy(src.begin(), src.end(), g.begin());
    for (double v : g) {
      if (!std::isfinite(v)) {
        throw NumericError("grad_check: non-finite analytic gradient");
      }
    }
    analytic.push_back(std::move(g));
  }

  GradCheckReport report;
  NoGradGuard no_grad;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto values = inputs[i].mutable_data();
    const std::size_t n = values.size();
    std::size_t stride = 1;
    if (max_coords > 0 && n > max_coords) stride = (n + max_coords - 1) / max_coords;
    for (std::size_t j = 0; j < n; j += stride) {
      const double saved = values[j];
      values[j] = saved + h;
      const double plus = fn(inputs).item();
      values[j] = saved - h;
      const double minus = fn(inputs).item();
      values[j] = saved;
      const double numeric = (plus - minus) / (2 * h);
      const double a = analytic[i][j];
      const double err = std::abs(a - numeric) /
                         std::max({std::abs(a), std::abs(numeric), floor});
      ++report.checked;
      if (!(err <= report.max_rel_error)) {
        report.max_rel_error = std::isnan(err) ? INFINITY : err;
        report.worst = "input[" + std::to_string(i) + "] element " + std::to_string(j);
      }
    }
  }
  report.passed = report.max_rel_error < tol;
  return report;
}

}  // namespace mim
