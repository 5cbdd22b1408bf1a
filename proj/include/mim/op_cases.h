#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mim/grad_check.h"

namespace mim {

/// One differentiable op wrapped as a scalar function of random float64
/// inputs, ready for grad_check.
struct OpCase {
  std::string name;
  std::function<std::pair<ScalarFn, std::vector<Tensor64>>(std::uint64_t seed)>
      build;
};

/// Every differentiable op of the tensor core, each reduced to a scalar by a
/// fixed random projection so that all output coordinates are exercised.
std::vector<OpCase> differentiable_op_cases();

/// Random float64 tensor with N(0, 1) entries.
Tensor64 random_tensor(const Shape& shape, std::uint64_t seed,
                       double stddev = 1.0);

/// sum(x ⊙ w) for a fixed random w derived from seed.
Tensor64 random_projection(const Tensor64& x, std::uint64_t seed);

}  // namespace mim
