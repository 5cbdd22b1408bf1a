#include "mim/op_cases.h"

#include "mim/ops.h"
#include "mim/rng.h"

namespace mim {

Tensor64 random_tensor(const Shape& shape, std::uint64_t seed, double stddev) {
  Rng rng(seed);
  std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = rng.normal() * stddev;
  return Tensor64::from_data(shape, std::move(v));
}

Tensor64 random_projection(const Tensor64& x, std::uint64_t seed) {
  return sum(mul(x, random_tensor(x.shape(), seed ^ 0xABCDEFULL)));
}

namespace {

using Inputs = std::vector<Tensor64>;

OpCase unary(std::string name, Shape shape,
             std::function<Tensor64(const Tensor64&)> op,
             double stddev = 1.0) {
  return {name, [=](std::uint64_t seed) {
            ScalarFn fn = [=](const Inputs& in) {
              return random_projection(op(in[0]), seed + 7);
            };
            return std::make_pair(fn, Inputs{random_tensor(shape, seed, stddev)});
          }};
}

OpCase binary_case(std::string name, Shape sa, Shape sb,
                   std::function<Tensor64(const Tensor64&, const Tensor64&)> op) {
  return {name, [=](std::uint64_t seed) {
            ScalarFn fn = [=](const Inputs& in) {
              return random_projection(op(in[0], in[1]), seed + 7);
            };
            return std::make_pair(
                fn, Inputs{random_tensor(sa, seed), random_tensor(sb, seed + 1)});
          }};
}

}  // namespace

std::vector<OpCase> differentiable_op_cases() {
  std::vector<OpCase> cases;
  cases.push_back(binary_case("add_broadcast", {2, 3, 4}, {3, 1},
                              [](auto& a, auto& b) { return add(a, b); }));
  cases.push_back(binary_case("sub_broadcast", {2, 3, 4}, {4},
                              [](auto& a, auto& b) { return sub(a, b); }));
  cases.push_back(binary_case("mul_broadcast", {2, 1, 4}, {2, 3, 1},
                              [](auto& a, auto& b) { return mul(a, b); }));
  cases.push_back(unary("scale", {3, 4}, [](auto& x) { return scale(x, 2.5); }));
  cases.push_back(unary("add_scalar", {3, 4},
                        [](auto& x) { return add_scalar(x, -0.75); }));
  cases.push_back(binary_case("matmul", {3, 4}, {4, 2},
                              [](auto& a, auto& b) { return matmul(a, b); }));
  cases.push_back(binary_case("matmul_batched", {2, 3, 4}, {2, 4, 5},
                              [](auto& a, auto& b) { return matmul(a, b); }));
  cases.push_back(binary_case("matmul_shared_rhs", {2, 3, 4}, {4, 5},
                              [](auto& a, auto& b) { return matmul(a, b); }));
  cases.push_back({"linear", [](std::uint64_t seed) {
                     ScalarFn fn = [seed](const Inputs& in) {
                       return random_projection(linear(in[0], in[1], in[2]), seed + 7);
                     };
                     return std::make_pair(
                         fn, Inputs{random_tensor({2, 3, 4}, seed),
                                    random_tensor({4, 5}, seed + 1),
                                    random_tensor({5}, seed + 2)});
                   }});
  cases.push_back(unary("reshape", {2, 6},
                        [](auto& x) { return reshape(x, {3, -1}); }));
  cases.push_back(unary("permute", {2, 3, 4},
                        [](auto& x) { return permute(x, {2, 0, 1}); }));
  cases.push_back(unary("transpose", {2, 3, 4},
                        [](auto& x) { return transpose(x); }));
  cases.push_back(unary("slice", {3, 5, 2},
                        [](auto& x) { return slice(x, 1, 1, 3); }));
  cases.push_back(binary_case("concat", {2, 3, 2}, {2, 1, 2}, [](auto& a, auto& b) {
    return concat<double>({a, b}, 1);
  }));
  cases.push_back(unary("softmax_last", {3, 5},
                        [](auto& x) { return softmax(x, -1); }));
  cases.push_back(unary("softmax_axis0", {4, 3},
                        [](auto& x) { return softmax(x, 0); }));
  cases.push_back(binary_case("rms_norm", {2, 8}, {8}, [](auto& x, auto& g) {
    return rms_norm(x, g, 1e-6);
  }));
  cases.push_back({"layer_norm", [](std::uint64_t seed) {
                     ScalarFn fn = [seed](const Inputs& in) {
                       return random_projection(layer_norm(in[0], in[1], in[2], 1e-5),
                                                seed + 7);
                     };
                     return std::make_pair(fn, Inputs{random_tensor({3, 6}, seed),
                                                      random_tensor({6}, seed + 1),
                                                      random_tensor({6}, seed + 2)});
                   }});
  cases.push_back(unary("layer_norm_plain", {3, 6}, [](auto& x) {
    return layer_norm(x, Tensor64(), Tensor64(), 1e-5);
  }));
  cases.push_back(unary("gelu", {4, 5}, [](auto& x) { return gelu(x); }, 2.0));
  cases.push_back(unary("silu", {4, 5}, [](auto& x) { return silu(x); }, 2.0));
  cases.push_back(unary("sum", {3, 4}, [](auto& x) {
    return mul(sum(x), sum(x));
  }));
  cases.push_back(unary("mean", {3, 4}, [](auto& x) {
    return mul(mean(x), mean(x));
  }));
  cases.push_back(unary("sum_axis", {2, 3, 4},
                        [](auto& x) { return sum(x, 1, false); }));
  cases.push_back(unary("mean_axis", {2, 3, 4},
                        [](auto& x) { return mean(x, 2, true); }));
  cases.push_back(unary("embedding", {5, 3}, [](auto& table) {
    const std::vector<std::int64_t> ids{4, 0, 4, 2};
    return embedding(table, std::span<const std::int64_t>(ids));
  }));
  cases.push_back(unary("cross_entropy", {4, 6}, [](auto& logits) {
    const std::vector<std::int64_t> targets{1, 5, 0, 3};
    const std::vector<double> weights{1.0, 0.0, 0.5, 2.0};
    return cross_entropy(logits, std::span<const std::int64_t>(targets),
                         std::span<const double>(weights));
  }));
  cases.push_back({"conv2d", [](std::uint64_t seed) {
                     ScalarFn fn = [seed](const Inputs& in) {
                       return random_projection(conv2d(in[0], in[1], in[2], 2, 1),
                                                seed + 7);
                     };
                     return std::make_pair(fn, Inputs{random_tensor({2, 2, 5, 5}, seed),
                                                      random_tensor({3, 2, 3, 3}, seed + 1),
                                                      random_tensor({3}, seed + 2)});
                   }});
  cases.push_back({"conv_transpose2d", [](std::uint64_t seed) {
                     ScalarFn fn = [seed](const Inputs& in) {
                       return random_projection(
                           conv_transpose2d(in[0], in[1], in[2], 2, 1), seed + 7);
                     };
                     return std::make_pair(fn, Inputs{random_tensor({2, 3, 3, 3}, seed),
                                                      random_tensor({3, 2, 4, 4}, seed + 1),
                                                      random_tensor({2}, seed + 2)});
                   }});
  cases.push_back(binary_case("mse", {3, 4}, {3, 4},
                              [](auto& a, auto& b) { return mse(a, b); }));
  return cases;
}

}  // namespace mim
