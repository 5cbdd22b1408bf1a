#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mim/tensor.h"

namespace mim {

struct GradCheckReport {
  double max_rel_error = 0;
  bool passed = false;
  std::size_t checked = 0;    // number of scalar coordinates perturbed
  std::string worst;          // "input[i] element j" of the largest error
};

using ScalarFn =
    std::function<Tensor64(const std::vector<Tensor64>& inputs)>;

/// Compares the analytic gradient of a scalar function with central
/// differences, per coordinate: |a - n| / max(|a|, |n|, floor). Passes iff
/// the largest error is below tol. A non-finite analytic gradient throws.
/// `max_coords` > 0 samples that many coordinates per input uniformly (with
/// a fixed stride) instead of all of them.
GradCheckReport grad_check(const ScalarFn& fn, std::vector<Tensor64> inputs,
                           double tol, double h = 1e-4,
                           std::size_t max_coords = 0, double floor = 1e-4);

}  // namespace mim
