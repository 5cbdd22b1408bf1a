#include <cmath>

#include "doctest.h"
#include "mim/attention.h"
#include "mim/datagen.h"
#include "mim/suites.h"
#include "tiny.h"

using namespace mim;

namespace {

template <typename A, typename B>
double max_abs_diff(const A& a, const B& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

std::vector<TokenGrid> random_grids(int b, int side, int k, std::uint64_t seed, bool with_mask) {
  Rng rng(seed);
  std::vector<TokenGrid> grids;
  for (int i = 0; i < b; ++i) {
    TokenGrid g(side, side, k);
    for (auto& v : g.indices) v = static_cast<std::int64_t>(rng.below(with_mask ? k + 1 : k));
    grids.push_back(g);
  }
  return grids;
}

const std::string kCaption = "a large red circle at the center on a blue background";
const std::string kOther = "a small green square at the top-left on a white background";

}  // namespace

TEST_CASE("rope examples") {
  auto x = Tensor64::from_data({1, 4}, {1, 0, 1, 0});
  auto same = rope_rotate(x, {0}, 10000.0);
  for (int i = 0; i < 4; ++i) CHECK(same.data()[i] == x.data()[i]);
  // pair 0 turns by p radians, pair 1 by p / 100
  auto r = rope_rotate(x, {2}, 10000.0);
  CHECK(r.data()[0] == doctest::Approx(std::cos(2.0)));
  CHECK(r.data()[1] == doctest::Approx(std::sin(2.0)));
  CHECK(r.data()[2] == doctest::Approx(std::cos(0.02)));
  CHECK(r.data()[3] == doctest::Approx(std::sin(0.02)));
  auto y = random_tensor({3, 8}, 4);
  auto ry = rope_rotate(y, {5, 900, 12345}, 10000.0);
  for (int row = 0; row < 3; ++row) {
    double a = 0, b = 0;
    for (int c = 0; c < 8; ++c) {
      a += y.data()[row * 8 + c] * y.data()[row * 8 + c];
      b += ry.data()[row * 8 + c] * ry.data()[row * 8 + c];
    }
    CHECK(a == doctest::Approx(b).epsilon(1e-12));
  }
  CHECK_THROWS(rope_rotate(random_tensor({2, 8}, 1), {1}, 10000.0));
}

TEST_CASE("rope and qk-norm properties") {
  Report r;
  check_rope(r, 1000);
  for (const auto& c : r.checks) {
    INFO(c.name << " " << c.value);
    CHECK(c.passed);
  }
}

TEST_CASE("attention special cases") {
  auto q = random_tensor({1, 1, 1, 4}, 1), k = random_tensor({1, 1, 1, 4}, 2);
  auto v = random_tensor({1, 1, 1, 4}, 3);
  auto out = attention(q, k, v, Tensor64());
  for (int i = 0; i < 4; ++i) CHECK(out.data()[i] == doctest::Approx(v.data()[i]));

  const auto row = random_tensor({4}, 5);
  std::vector<double> keys;
  for (int j = 0; j < 6; ++j) keys.insert(keys.end(), row.data().begin(), row.data().end());
  auto w = attention_weights(random_tensor({1, 1, 3, 4}, 6), Tensor64::from_data({1, 1, 6, 4}, keys),
                             Tensor64());
  for (double x : w.data()) CHECK(x == doctest::Approx(1.0 / 6));

  auto bias = Tensor64::from_data({1, 1, 1, 6}, {0, 0, -1e9, 0, -1e9, 0});
  auto wb = attention_weights(random_tensor({1, 1, 2, 4}, 7), Tensor64::from_data({1, 1, 6, 4}, keys),
                              bias);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 6; ++j) CHECK(wb.data()[i * 6 + j] == doctest::Approx(j == 2 || j == 4 ? 0 : 0.25));
}

TEST_CASE("vocabulary and tokenize") {
  const auto vocab = Vocabulary::captions();
  CHECK(vocab.token(Vocabulary::kPad) == "<pad>");
  const auto ids = vocab.tokenize("A Large red CIRCLE", 6);
  CHECK(ids.size() == 6);
  CHECK(ids[0] == vocab.id("a"));
  CHECK(ids[1] == vocab.id("large"));
  CHECK(ids[3] == vocab.id("circle"));
  CHECK(ids[4] == Vocabulary::kPad);
  CHECK(vocab.tokenize("a zebra", 3)[1] == Vocabulary::kUnk);
  CHECK(vocab.tokenize(kCaption, 4).size() == 4);
  CHECK(vocab.null_ids(3) == std::vector<std::int64_t>{Vocabulary::kUncond, 0, 0});
  CHECK(Vocabulary::from_json(vocab.to_json()) == vocab);
  for (int i = 0; i < 1680; i += 7) {
    for (auto id : vocab.tokenize(caption(spec_at(i)), 16)) CHECK(id != Vocabulary::kUnk);
  }
}

TEST_CASE("text encoder: padding, batch order and the null embedding") {
  T2IModel<float> model(Vocabulary::captions(), test::tiny_text(), test::tiny_model(), 3);
  Rng rng(1);
  perturb_zero_params(model.params(), rng, 0.1);
  NoGradGuard guard;
  const auto a = model.tokenize(kCaption), b = model.tokenize(kOther);

  const auto ab = model.encode_ids({a, b});
  const auto ba = model.encode_ids({b, a});
  const auto w = model.text_config().width;
  CHECK(std::equal(ab.pooled.data().begin(), ab.pooled.data().begin() + w, ba.pooled.data().begin() + w));
  CHECK(std::equal(ab.pooled.data().begin() + w, ab.pooled.data().end(), ba.pooled.data().begin()));

  // the same caption at a shorter padded length gives the same pooled vector
  std::vector<std::int64_t> short_a(a.begin(), a.begin() + 12);
  const auto s = model.encode_ids({short_a});
  const auto full = model.encode_ids({a});
  CHECK(max_abs_diff(s.pooled.data(), full.pooled.data()) < 1e-6);

  const auto n1 = model.null_embedding(2);
  const auto n2 = model.null_embedding(1);
  CHECK(std::equal(n2.pooled.data().begin(), n2.pooled.data().end(), n1.pooled.data().begin()));
  CHECK(max_abs_diff(n2.pooled.data(), full.pooled.data()) > 1e-3);
  CHECK_THROWS(model.encode_ids({std::vector<std::int64_t>(17, 4)}));
}

TEST_CASE("zero-initialized gates make the backbone its bypass") {
  for (int side : {4, 16}) {
    T2IModel<float> model(Vocabulary::captions(), test::tiny_text(), test::tiny_model(), 2);
    NoGradGuard guard;
    const auto grids = random_grids(2, side, 16, 9, true);
    const auto text = model.encode_captions({kCaption, kOther});
    ConditionBundle c1, c2;
    c2.rate = make_rate(0.7);
    const auto out = model.logits(grids, text, {c1, c2});
    const auto by = model.backbone().bypass(grids);
    CHECK(out.shape() == Shape{2, side * side, 16});
    CHECK(std::equal(out.data().begin(), out.data().end(), by.data().begin(), by.data().end()));
  }
}

TEST_CASE("single-modal block equals a multimodal block with no text") {
  auto cfg = test::tiny_model();
  ParamStore<float> ms, ss;
  Rng r1(4), r2(5);
  Block<float> multi(ms, "m.", cfg, true, r1);
  Block<float> single(ss, "s.", cfg, false, r2);
  Rng noise(6);
  perturb_zero_params(ms, noise, 0.2);
  for (const auto& [name, t] : ss.items()) {
    auto src = ms.get("m." + name.substr(2));
    auto dst = t;
    std::copy(src.data().begin(), src.data().end(), dst.mutable_data().begin());
  }
  NoGradGuard guard;
  const auto x = cast<float>(random_tensor({2, 5, 32}, 1));
  const auto y = cast<float>(random_tensor({2, 32}, 2));
  const std::vector<std::int64_t> pos{3, 4, 5, 6, 7};
  const auto a = multi({x, Tensor::zeros({2, 0, 32})}, y, pos);
  const auto b = single({x, Tensor()}, y, pos);
  CHECK(a.image.shape() == b.image.shape());
  CHECK(max_abs_diff(a.image.data(), b.image.data()) < 1e-6);
  CHECK_THROWS(multi({x, Tensor()}, y, pos));
}

TEST_CASE("image logits respond to the caption and stay finite at large inputs") {
  T2IModel<float> model(Vocabulary::captions(), test::tiny_text(), test::tiny_model(), 2);
  Rng rng(8);
  perturb_zero_params(model.params(), rng, 0.1);
  NoGradGuard guard;
  const auto grids = random_grids(1, 4, 16, 3, true);
  const auto a = model.logits(grids, model.encode_captions({kCaption}), {ConditionBundle{}});
  const auto b = model.logits(grids, model.encode_captions({kOther}), {ConditionBundle{}});
  CHECK(max_abs_diff(a.data(), b.data()) > 1e-4);

  for (auto& v : model.params().get("backbone.embed").mutable_data()) v *= 1e3f;
  for (auto& v : model.params().get("text.tokens").mutable_data()) v *= 1e3f;
  const auto big = model.logits(grids, model.encode_captions({kCaption}), {ConditionBundle{}});
  for (float v : big.data()) CHECK(std::isfinite(v));
}

TEST_CASE("condition pathway") {
  T2IModel<float> model(Vocabulary::captions(), test::tiny_text(), test::tiny_model(), 2);
  NoGradGuard guard;
  const auto pooled = model.encode_captions({kCaption, kCaption}).pooled;
  ConditionBundle lo, hi, pref_hi, pref_one;
  lo.rate = {0.0, 0};
  hi.rate = {0.9995, 999};
  pref_hi.micro.preference = 1.7;
  pref_one.micro.preference = 1.0;
  const auto y = model.backbone().condition(pooled, {lo, hi});
  const auto d = model.text_config().width;
  double diff = 0;
  for (int i = 0; i < d; ++i) diff = std::max(diff, static_cast<double>(std::abs(y.data()[i] - y.data()[d + i])));
  CHECK(diff > 1e-4);
  const auto yp = model.backbone().condition(pooled, {pref_hi, pref_one});
  CHECK(std::equal(yp.data().begin(), yp.data().begin() + d, yp.data().begin() + d));
  ConditionBundle bad;
  bad.micro.crop_x = NAN;
  CHECK_THROWS(model.backbone().condition(pooled, {bad, bad}));

  Rng rng(8);
  perturb_zero_params(model.params(), rng, 0.1);
  CHECK(condition_sensitivity(model, 4, kCaption) > 1e-4);
}

TEST_CASE("compression path shapes and gradients") {
  auto cfg = test::tiny_model();
  CHECK(cfg.compresses(16));
  CHECK(!cfg.compresses(8));
  cfg.compression_enabled = false;
  CHECK(!cfg.compresses(16));

  ParamStore<double> store;
  Rng rng(2);
  auto dcfg = test::tiny_model();
  dcfg.width = 8;
  dcfg.heads = 2;
  Backbone<double> bb(store, "bb.", dcfg, rng);
  const auto x = random_tensor({2, 16, 8}, 3);
  const auto c = bb.compress(x, 4, 4);
  CHECK(c.shape() == Shape{2, 4, 8});
  CHECK(bb.decompress(c, 4, 4).shape() == Shape{2, 16, 8});
  CHECK_THROWS(bb.compress(random_tensor({1, 15, 8}, 1), 5, 3));

  ScalarFn fn = [&](const std::vector<Tensor64>& in) {
    return random_projection(bb.decompress(bb.compress(in[0], 4, 4), 4, 4), 7);
  };
  std::vector<Tensor64> inputs{random_tensor({1, 16, 8}, 4)};
  for (const auto& name : {"bb.compress.weight", "bb.decompress.weight"}) inputs.push_back(store.get(name));
  const auto g = grad_check(fn, inputs, 1e-3, 1e-4);
  CHECK(g.passed);

  T2IModel<float> model(Vocabulary::captions(), test::tiny_text(), test::tiny_model(), 2);
  NoGradGuard guard;
  const auto grids = random_grids(1, 16, 16, 1, true);
  CHECK(model.logits(grids, model.encode_captions({kCaption}), {ConditionBundle{}}).shape() ==
        Shape{1, 256, 16});
}

TEST_CASE("the mask row gets no gradient when nothing is masked") {
  T2IModel<float> model(Vocabulary::captions(), test::tiny_text(), test::tiny_model(), 2);
  Rng rng(1);
  perturb_zero_params(model.params(), rng, 0.1);
  auto params = model.params().tensors();
  for (auto& p : params) p.set_requires_grad(true);
  const auto grids = random_grids(2, 4, 16, 5, false);
  const auto out = model.logits(grids, model.encode_captions({kCaption, kOther}),
                                {ConditionBundle{}, ConditionBundle{}});
  random_projection(cast<double>(out), 1);  // shape sanity
  sum(mul(out, out)).backward();
  auto table = model.params().get("backbone.embed");
  const auto d = table.size(1);
  const auto g = table.grad();
  REQUIRE(!g.empty());
  for (std::int64_t j = 0; j < d; ++j) CHECK(g[16 * d + j] == 0.0f);
  double other = 0;
  for (std::int64_t j = 0; j < 16 * d; ++j) other = std::max(other, static_cast<double>(std::abs(g[j])));
  CHECK(other > 0);
}

TEST_CASE("full backbone gradient check on the toy config") {
  const auto g = backbone_grad_check(3);
  INFO(g.worst);
  CHECK(g.max_rel_error < 1e-3);
}

TEST_CASE("model config json round trip and validation") {
  const auto cfg = test::tiny_model();
  CHECK(ModelConfig::from_json(cfg.to_json()).to_json() == cfg.to_json());
  auto bad = cfg;
  bad.heads = 3;
  CHECK_THROWS(bad.check());
  bad = cfg;
  bad.width = 36;
  bad.heads = 4;  // head dim 9 is odd
  CHECK_THROWS(bad.check());
}
