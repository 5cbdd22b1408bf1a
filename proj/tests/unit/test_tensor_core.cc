#include <cmath>
#include <numbers>

#include "doctest.h"
#include "mim/grad_check.h"
#include "mim/op_cases.h"
#include "mim/ops.h"
#include "mim/optim.h"

using namespace mim;

namespace {

Tensor64 t64(Shape shape, std::vector<double> v) {
  return Tensor64::from_data(std::move(shape), std::move(v));
}

// Central differences, written out independently of grad_check.
std::vector<double> fd_gradient(const std::function<double(const Tensor64&)>& f,
                                Tensor64 x, double h) {
  std::vector<double> g(static_cast<std::size_t>(x.numel()));
  auto v = x.mutable_data();
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double saved = v[i];
    v[i] = saved + h;
    const double p = f(x);
    v[i] = saved - h;
    const double m = f(x);
    v[i] = saved;
    g[i] = (p - m) / (2 * h);
  }
  return g;
}

}  // namespace

TEST_CASE("matmul identity and arithmetic") {
  auto eye = t64({2, 2}, {1, 0, 0, 1});
  auto a = t64({2, 2}, {1, 2, 3, 4});
  auto out = matmul(eye, a);
  CHECK(std::vector<double>(out.data().begin(), out.data().end()) ==
        std::vector<double>{1, 2, 3, 4});
  CHECK(matmul(t64({1, 2}, {1, 2}), t64({2, 1}, {3, 4})).item() == 11.0);
}

TEST_CASE("matmul gradient of sum is row sums of the right operand") {
  auto a = random_tensor({3, 4}, 1);
  auto b = random_tensor({4, 2}, 2);
  a.set_requires_grad(true);
  sum(matmul(a, b)).backward();
  auto fd = fd_gradient([&](const Tensor64& x) {
    NoGradGuard ng;
    return sum(matmul(x, b)).item();
  }, a.detach(), 1e-4);
  for (int i = 0; i < 3; ++i) {
    for (int k = 0; k < 4; ++k) {
      const double rowsum = b.data()[k * 2] + b.data()[k * 2 + 1];
      CHECK(a.grad()[i * 4 + k] == doctest::Approx(rowsum).epsilon(1e-12));
      CHECK(a.grad()[i * 4 + k] == doctest::Approx(fd[i * 4 + k]).epsilon(1e-8));
    }
  }
}

TEST_CASE("matmul shape mismatch names both shapes") {
  try {
    matmul(t64({2, 3}, std::vector<double>(6)), t64({2, 3}, std::vector<double>(6)));
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("and [2x3]") != std::string::npos);
  }
}

TEST_CASE("conv2d examples") {
  auto ones = Tensor64::full({1, 1, 3, 3}, 1.0);
  auto two = Tensor64::full({1, 1, 1, 1}, 2.0);
  auto scaled = conv2d(ones, two, Tensor64(), 1, 0);
  for (double v : scaled.data()) CHECK(v == 2.0);

  auto x = random_tensor({1, 1, 3, 3}, 3);
  double total = 0;
  for (double v : x.data()) total += v;
  auto window = conv2d(x, Tensor64::full({1, 1, 3, 3}, 1.0), Tensor64(), 1, 0);
  REQUIRE(window.shape() == Shape{1, 1, 1, 1});
  CHECK(window.item() == doctest::Approx(total).epsilon(1e-12));
}

TEST_CASE("conv2d stride 2 matches a naive loop") {
  auto x = random_tensor({2, 3, 8, 8}, 5);
  auto w = random_tensor({4, 3, 2, 2}, 6);
  auto out = conv2d(x, w, Tensor64(), 2, 0);
  REQUIRE(out.shape() == Shape{2, 4, 4, 4});
  for (int b = 0; b < 2; ++b)
    for (int o = 0; o < 4; ++o)
      for (int oy = 0; oy < 4; ++oy)
        for (int ox = 0; ox < 4; ++ox) {
          double acc = 0;
          for (int c = 0; c < 3; ++c)
            for (int ki = 0; ki < 2; ++ki)
              for (int kj = 0; kj < 2; ++kj)
                acc += x.data()[((b * 3 + c) * 8 + oy * 2 + ki) * 8 + ox * 2 + kj] *
                       w.data()[((o * 3 + c) * 2 + ki) * 2 + kj];
          CHECK(out.data()[((b * 4 + o) * 4 + oy) * 4 + ox] ==
                doctest::Approx(acc).epsilon(1e-12));
        }
}

TEST_CASE("conv2d rejects non-integral output extent") {
  CHECK_THROWS_AS(conv2d(random_tensor({1, 1, 5, 5}, 1),
                         random_tensor({1, 1, 2, 2}, 2), Tensor64(), 2, 0),
                  ShapeError);
}

TEST_CASE("conv_transpose2d is the adjoint of conv2d") {
  // <conv(x), y> == <x, convT(y)> for the same kernel.
  auto x = random_tensor({1, 2, 6, 6}, 11);
  auto w = random_tensor({3, 2, 4, 4}, 12);
  auto y = random_tensor({1, 3, 3, 3}, 13);
  auto cx = conv2d(x, w, Tensor64(), 2, 1);
  REQUIRE(cx.shape() == y.shape());
  auto ty = conv_transpose2d(y, w, Tensor64(), 2, 1);
  REQUIRE(ty.shape() == x.shape());
  CHECK(sum(mul(cx, y)).item() == doctest::Approx(sum(mul(x, ty)).item()).epsilon(1e-12));
}

TEST_CASE("softmax examples") {
  auto s = softmax(t64({2}, {0, 0}));
  CHECK(s.data()[0] == 0.5);
  CHECK(s.data()[1] == 0.5);
  auto big = softmax(Tensor::from_data({2}, {1000.f, 0.f}));
  CHECK(big.data()[0] == 1.0f);
  CHECK(big.data()[1] == 0.0f);
  auto r = softmax(Tensor::from_data({3}, {1.f, 2.f, 3.f}));
  long double z = std::exp(1.0L) + std::exp(2.0L) + std::exp(3.0L);
  for (int i = 0; i < 3; ++i) {
    CHECK(static_cast<long double>(r.data()[i]) ==
          doctest::Approx(static_cast<double>(std::exp(static_cast<long double>(i + 1)) / z))
              .epsilon(1e-6));
  }
  CHECK_THROWS_AS(softmax(t64({2}, {NAN, 0})), NumericError);
}

TEST_CASE("softmax rows sum to one for arbitrary finite input") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto x = Tensor::from_data({4, 33}, [&] {
      auto t = random_tensor({4, 33}, seed, seed < 10 ? 1.0 : 300.0);
      return std::vector<float>(t.data().begin(), t.data().end());
    }());
    auto y = softmax(x, 1);
    for (int r = 0; r < 4; ++r) {
      double total = 0;
      for (int j = 0; j < 33; ++j) total += y.data()[r * 33 + j];
      CHECK(std::abs(total - 1.0) < 1e-6);
    }
    auto y0 = softmax(x, 0);
    for (int j = 0; j < 33; ++j) {
      double total = 0;
      for (int r = 0; r < 4; ++r) total += y0.data()[r * 33 + j];
      CHECK(std::abs(total - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("rms_norm examples") {
  auto zero = rms_norm(t64({4}, {0, 0, 0, 0}), Tensor64::full({4}, 1.0), 1e-6);
  for (double v : zero.data()) CHECK(v == 0.0);
  auto y = rms_norm(t64({2}, {3, 4}), Tensor64::full({2}, 1.0), 0.0);
  CHECK(y.data()[0] == doctest::Approx(3 / std::sqrt(12.5)).epsilon(1e-15));
  CHECK(y.data()[1] == doctest::Approx(4 / std::sqrt(12.5)).epsilon(1e-15));
}

TEST_CASE("rms_norm gradient on random 2x8") {
  auto x = random_tensor({2, 8}, 21);
  auto g = random_tensor({8}, 22);
  ScalarFn fn = [](const std::vector<Tensor64>& in) {
    return random_projection(rms_norm(in[0], in[1], 1e-6), 3);
  };
  auto report = grad_check(fn, {x, g}, 1e-3);
  CHECK(report.passed);
  CHECK(report.max_rel_error < 1e-6);
}

TEST_CASE("grad_check on a linear function is exact up to rounding") {
  ScalarFn fn = [](const std::vector<Tensor64>& in) {
    return sum(scale(in[0], 3.0));
  };
  auto report = grad_check(fn, {random_tensor({5}, 1)}, 1e-3);
  CHECK(report.passed);
  CHECK(report.max_rel_error < 1e-9);
}

TEST_CASE("grad_check on matmul+softmax+sum composite") {
  ScalarFn fn = [](const std::vector<Tensor64>& in) {
    return random_projection(softmax(matmul(in[0], in[1])), 9);
  };
  auto report =
      grad_check(fn, {random_tensor({3, 4}, 1), random_tensor({4, 5}, 2)}, 1e-5);
  CHECK(report.passed);
  CHECK(report.max_rel_error < 1e-5);
}

TEST_CASE("grad_check catches a corrupted backward rule") {
  // square with a backward that forgets the factor 2
  auto bad_square = [](const Tensor64& x) {
    std::vector<double> out(x.data().begin(), x.data().end());
    for (auto& v : out) v *= v;
    return make_result<double>(x.shape(), std::move(out), {x}, "bad_square",
                               [](Node<double>& self) {
                                 auto& in = *self.inputs[0];
                                 auto& g = in.ensure_grad();
                                 for (std::size_t i = 0; i < g.size(); ++i) {
                                   g[i] += self.grad[i] * in.data[i];
                                 }
                               });
  };
  ScalarFn fn = [&](const std::vector<Tensor64>& in) { return sum(bad_square(in[0])); };
  auto report = grad_check(fn, {random_tensor({4}, 3)}, 1e-3);
  CHECK_FALSE(report.passed);
  CHECK(report.max_rel_error > 0.4);
}

TEST_CASE("grad_check rejects non-finite analytic gradients") {
  auto nan_grad = [](const Tensor64& x) {
    std::vector<double> out(x.data().begin(), x.data().end());
    return make_result<double>(x.shape(), std::move(out), {x}, "nan_grad",
                               [](Node<double>& self) {
                                 auto& g = self.inputs[0]->ensure_grad();
                                 for (auto& v : g) v = NAN;
                               });
  };
  ScalarFn fn = [&](const std::vector<Tensor64>& in) { return sum(nan_grad(in[0])); };
  CHECK_THROWS_AS(grad_check(fn, {random_tensor({3}, 1)}, 1e-3), NumericError);
}

TEST_CASE("every differentiable op passes grad_check on 10 seeds") {
  for (const auto& op : differentiable_op_cases()) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      auto [fn, inputs] = op.build(seed * 101 + 1);
      auto report = grad_check(fn, inputs, 1e-3);
      INFO(op.name << " seed " << seed << " worst " << report.worst << " err "
                   << report.max_rel_error);
      CHECK(report.passed);
    }
  }
}

TEST_CASE("ops are deterministic") {
  auto run = [] {
    auto x = Tensor::from_data({2, 3, 8}, std::vector<float>(48, 0.25f));
    for (int i = 0; i < 48; ++i) x.mutable_data()[i] = std::sin(static_cast<float>(i));
    auto w = Tensor::from_data({8, 8}, std::vector<float>(64));
    for (int i = 0; i < 64; ++i) w.mutable_data()[i] = std::cos(static_cast<float>(i));
    auto y = softmax(gelu(layer_norm(matmul(x, w), Tensor(), Tensor(), 1e-5f)));
    return std::vector<float>(y.data().begin(), y.data().end());
  };
  CHECK(run() == run());
}

TEST_CASE("matmul rows are independent of batch size") {
  auto a = Tensor::from_data({5, 7}, std::vector<float>(35));
  for (int i = 0; i < 35; ++i) a.mutable_data()[i] = std::sin(1.3f * i);
  auto b = Tensor::from_data({7, 300}, std::vector<float>(2100));
  for (int i = 0; i < 2100; ++i) b.mutable_data()[i] = std::cos(0.7f * i);
  auto full = matmul(a, b);
  for (int r = 0; r < 5; ++r) {
    auto row = matmul(slice(a, 0, r, 1), b);
    for (int j = 0; j < 300; ++j) CHECK(row.data()[j] == full.data()[r * 300 + j]);
  }
}

TEST_CASE("zero-extent tensors flow through concat and linear") {
  auto empty = Tensor::zeros({1, 0, 4});
  auto full = Tensor::full({1, 3, 4}, 1.0f);
  auto cat = concat<float>({empty, full}, 1);
  CHECK(cat.shape() == Shape{1, 3, 4});
  auto w = Tensor::full({4, 2}, 1.0f, true);
  auto y = linear(empty, w, Tensor());
  CHECK(y.shape() == Shape{1, 0, 2});
}

TEST_CASE("embedding scatter-adds repeated ids") {
  auto table = Tensor64::zeros({3, 2}, true);
  const std::vector<std::int64_t> ids{1, 1, 2};
  sum(embedding(table, std::span<const std::int64_t>(ids))).backward();
  CHECK(std::vector<double>(table.grad().begin(), table.grad().end()) ==
        std::vector<double>{0, 0, 2, 2, 1, 1});
  const std::vector<std::int64_t> bad{3};
  CHECK_THROWS(embedding(table, std::span<const std::int64_t>(bad)));
}

TEST_CASE("AdamW with zero learning rate leaves parameters bit-identical") {
  auto p = Tensor::from_data({3}, {0.5f, -1.25f, 3.0f}, true);
  auto before = std::vector<float>(p.data().begin(), p.data().end());
  AdamW<float> opt({p}, AdamWConfig{.lr = 0.0});
  for (int i = 0; i < 3; ++i) {
    p.zero_grad();
    sum(mul(p, p)).backward();
    opt.step();
  }
  CHECK(std::vector<float>(p.data().begin(), p.data().end()) == before);
}

TEST_CASE("AdamW first step moves by lr·sign(g) plus decay") {
  auto p = Tensor64::from_data({2}, {1.0, -2.0}, true);
  AdamW<double> opt({p}, AdamWConfig{.lr = 0.1, .weight_decay = 0.01});
  sum(scale(p, 3.0)).backward();
  opt.step();
  // mhat = g, vhat = g², update = g/(|g| + eps) ≈ 1
  CHECK(p.data()[0] == doctest::Approx(1.0 - 0.1 * (3.0 / (3.0 + 1e-8)) - 0.1 * 0.01 * 1.0));
  CHECK(p.data()[1] == doctest::Approx(-2.0 - 0.1 * (3.0 / (3.0 + 1e-8)) + 0.1 * 0.01 * 2.0));
}

TEST_CASE("global-norm clipping") {
  auto a = Tensor64::from_data({2}, {0, 0}, true);
  auto b = Tensor64::from_data({1}, {0}, true);
  a.mutable_grad()[0] = 6;
  a.mutable_grad()[1] = 0;
  b.mutable_grad()[0] = 8;
  const double before = clip_grad_norm<double>({a, b}, 1.0);
  CHECK(before == doctest::Approx(10.0));
  CHECK(std::abs(global_grad_norm<double>({a, b}) - 1.0) < 1e-6);
  CHECK(a.grad()[0] == doctest::Approx(0.6));
  // below the threshold nothing changes
  CHECK(clip_grad_norm<double>({a, b}, 5.0) == doctest::Approx(1.0));
  CHECK(b.grad()[0] == doctest::Approx(0.8));
}
