#include <cmath>
#include <numeric>

#include "doctest.h"
#include "mim/trainer.h"
#include "tiny.h"

using namespace mim;

namespace {

TrainItem grid_item(int side, int k, std::uint64_t seed) {
  Rng rng(seed);
  TrainItem it;
  it.tokens = TokenGrid(side, side, k);
  for (auto& v : it.tokens.indices) v = static_cast<std::int64_t>(rng.below(k));
  it.text_ids = {5, 6, 7};
  return it;
}

}  // namespace

TEST_CASE("make_batch masks round(r*N) cells, at least one") {
  const auto item = grid_item(8, 16, 1);
  const std::vector<TrainItem> items{item};
  Rng rng(3);
  BatchOptions opt;
  opt.cond_dropout_p = 0;

  opt.forced_rate = 1.0;
  auto full = make_batch(items, opt, rng);
  CHECK(full.masked[0].masked_count() == 64);
  CHECK(full.bundles[0].rate.level == 999);

  opt.forced_rate = 0.0;
  auto one = make_batch(items, opt, rng);
  CHECK(one.masked[0].masked_count() == 1);

  opt.forced_rate.reset();
  for (int trial = 0; trial < 200; ++trial) {
    auto b = make_batch(items, opt, rng);
    const auto m = b.masked[0].masked_count();
    const auto expect = std::max<std::int64_t>(1, std::llround(b.rates[0].r * 64));
    CHECK(m == expect);
    CHECK(b.bundles[0].rate.level == discretize(static_cast<double>(m) / 64));
    for (std::int64_t i = 0; i < 64; ++i)
      if (!b.masked[0].masked(i)) CHECK(b.masked[0].indices[i] == item.tokens.indices[i]);
    CHECK(b.bundles[0].micro.preference >= 0.5);
    CHECK(b.bundles[0].micro.preference <= 1.0);
    CHECK(b.bundles[0].micro.crop_x == 0);
  }

  TrainItem empty;
  CHECK_THROWS(make_batch(std::vector<TrainItem>{empty}, opt, rng));
}

TEST_CASE("masked positions are uniform over cells") {
  const std::vector<TrainItem> items{grid_item(8, 16, 2)};
  BatchOptions opt;
  opt.cond_dropout_p = 0;
  opt.forced_rate = 0.5;
  Rng rng(11);
  std::vector<int> hits(64, 0);
  const int draws = 10000;
  for (int d = 0; d < draws; ++d) {
    auto b = make_batch(items, opt, rng);
    for (std::int64_t i = 0; i < 64; ++i) hits[i] += b.masked[0].masked(i);
  }
  for (int h : hits) CHECK(std::abs(h / double(draws) - 0.5) <= 0.02);
}

TEST_CASE("condition dropout frequency") {
  std::vector<TrainItem> items(10, grid_item(4, 16, 3));
  BatchOptions opt;
  opt.null_ids = {2, 0, 0};
  for (double p : {0.1, 0.3}) {
    opt.cond_dropout_p = p;
    Rng rng(5);
    int nulled = 0, total = 0;
    for (int d = 0; d < 1000; ++d) {
      auto b = make_batch(items, opt, rng);
      for (std::size_t i = 0; i < b.size(); ++i) {
        nulled += b.nulled[i];
        ++total;
        CHECK(b.text_ids[i] == (b.nulled[i] ? opt.null_ids : items[i].text_ids));
      }
    }
    CHECK(std::abs(nulled / double(total) - p) <= 0.02);
  }
}

TEST_CASE("masked_ce_loss examples") {
  const int k = 256;
  TokenGrid truth(2, 2, k);
  truth.indices = {3, 100, 7, 255};
  std::vector<bool> mask{true, false, true, true};

  std::vector<float> onehot(4 * k, 0.0f);
  for (int i = 0; i < 4; ++i) onehot[i * k + truth.indices[i]] = 1000.0f;
  CHECK(masked_ce_loss(Tensor::from_data({4, k}, onehot), truth, mask).item() < 1e-6);

  auto uniform = Tensor::zeros({4, k});
  CHECK(masked_ce_loss(uniform, truth, mask).item() == doctest::Approx(std::log(256.0)).epsilon(1e-6));

  Rng rng(1);
  std::vector<float> base(4 * k);
  for (auto& v : base) v = static_cast<float>(rng.normal());
  auto perturbed = base;
  for (int j = 0; j < k; ++j) perturbed[1 * k + j] += static_cast<float>(rng.normal() * 10);
  const float a = masked_ce_loss(Tensor::from_data({4, k}, base), truth, mask).item();
  const float b = masked_ce_loss(Tensor::from_data({4, k}, perturbed), truth, mask).item();
  CHECK(a == b);

  CHECK_THROWS(masked_ce_loss(uniform, truth, std::vector<bool>(4, false)));
}

TEST_CASE("batch loss ignores unmasked logits and item order") {
  std::vector<TrainItem> items;
  for (int i = 0; i < 4; ++i) items.push_back(grid_item(4, 8, 10 + i));
  BatchOptions opt;
  opt.cond_dropout_p = 0;
  Rng rng(2);
  auto batch = make_batch(items, opt, rng);
  Rng lr(9);
  std::vector<float> values(4 * 16 * 8);
  for (auto& v : values) v = static_cast<float>(lr.normal());
  auto logits = Tensor::from_data({4, 16, 8}, values, true);
  auto loss = batch_masked_ce(logits, batch);
  loss.backward();
  double expect = 0;
  for (int b = 0; b < 4; ++b) {
    auto rows = reshape(slice(logits.detach(), 0, b, 1), {16, 8});
    expect += masked_ce_loss(rows, batch.truth[b], batch.masked[b].mask()).item() / 4;
    for (int c = 0; c < 16; ++c) {
      if (batch.masked[b].masked(c)) continue;
      for (int j = 0; j < 8; ++j) CHECK(logits.grad()[(b * 16 + c) * 8 + j] == 0.0f);
    }
  }
  CHECK(loss.item() == doctest::Approx(expect).epsilon(1e-6));

  const std::vector<int> perm{2, 0, 3, 1};
  TrainBatch shuffled;
  std::vector<float> pv;
  for (int b : perm) {
    shuffled.truth.push_back(batch.truth[b]);
    shuffled.masked.push_back(batch.masked[b]);
    pv.insert(pv.end(), values.begin() + b * 128, values.begin() + (b + 1) * 128);
  }
  CHECK(batch_masked_ce(Tensor::from_data({4, 16, 8}, pv), shuffled).item() ==
        doctest::Approx(loss.item()).epsilon(1e-6));
}

TEST_CASE("gradient clipping bounds the applied norm") {
  auto p = Tensor::zeros({2, 3}, true);
  auto g = p.mutable_grad();
  const float raw[6] = {6, 0, 0, 8, 0, 0};
  std::copy(raw, raw + 6, g.begin());
  const double before = clip_grad_norm(std::vector<Tensor>{p}, 1.0);
  CHECK(before == doctest::Approx(10.0));
  CHECK(global_grad_norm(std::vector<Tensor>{p}) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("train step with zero learning rate leaves parameters unchanged") {
  T2IModel<float> model(Vocabulary::captions(), test::tiny_text(), test::tiny_model(), 4);
  const auto data = test::tiny_dataset(model, 4, 4, 1);
  std::vector<std::vector<float>> before;
  for (const auto& p : model.params().tensors()) before.emplace_back(p.data().begin(), p.data().end());
  TrainConfig cfg;
  cfg.lr = 0;
  cfg.batch = 4;
  Trainer trainer(model, cfg);
  Rng rng(1);
  BatchOptions opt;
  opt.null_ids = model.vocab().null_ids(model.text_config().max_len);
  const auto r = trainer.step(make_batch(data, opt, rng));
  CHECK(r.grad_norm > 0);
  const auto after = model.params().tensors();
  for (std::size_t i = 0; i < after.size(); ++i) {
    CHECK(std::equal(before[i].begin(), before[i].end(), after[i].data().begin()));
  }
}

TEST_CASE("training is deterministic and reduces the loss") {
  auto run = [](int steps, double p) {
    T2IModel<float> model(Vocabulary::captions(), test::tiny_text(), test::tiny_model(), 4);
    const auto data = test::tiny_dataset(model, 4, 4, 1);
    TrainConfig cfg;
    cfg.steps = steps;
    cfg.batch = 4;
    cfg.lr = 3e-3;
    cfg.cond_dropout_p = p;
    cfg.seed = 8;
    std::vector<std::string> lines;
    TrainHooks hooks;
    hooks.on_step = [&](int s, const StepResult& r) { lines.push_back(metrics_line(s, r)); };
    auto result = train_t2i(model, data, cfg, hooks);
    return std::make_pair(result, lines);
  };
  const auto [a, lines] = run(40, 0.1);
  const auto [b, lines_b] = run(40, 0.1);
  CHECK(a.losses == b.losses);
  CHECK(lines == lines_b);
  CHECK(lines.size() == 40);
  CHECK(lines[0].rfind("0,", 0) == 0);
  CHECK(std::count(lines[0].begin(), lines[0].end(), ',') == 2);
  const double head = std::accumulate(a.losses.begin(), a.losses.begin() + 5, 0.0) / 5;
  const double tail = std::accumulate(a.losses.end() - 5, a.losses.end(), 0.0) / 5;
  CHECK(tail < head);

  const auto [c, unused] = run(30, 0.0);
  CHECK(c.nulled_items == 0);
  CHECK(c.items_seen == 120);
}

TEST_CASE("stop hook ends training early") {
  T2IModel<float> model(Vocabulary::captions(), test::tiny_text(), test::tiny_model(), 4);
  const auto data = test::tiny_dataset(model, 4, 4, 1);
  TrainConfig cfg;
  cfg.steps = 50;
  cfg.batch = 2;
  TrainHooks hooks;
  hooks.stop = [](int step) { return step == 6; };
  CHECK(train_t2i(model, data, cfg, hooks).losses.size() == 7);
}

TEST_CASE("initial loss is near ln K") {
  for (int k : {16, 256}) {
    T2IModel<float> model(Vocabulary::captions(), test::tiny_text(), test::tiny_model(k), 6);
    const auto data = test::tiny_dataset(model, 8, 8, 2);
    const double ce = evaluate_masked_ce(model, data, 2, 1);
    CHECK(std::abs(ce - std::log(k)) <= 0.1 * std::log(k));
  }
}

TEST_CASE("non-finite loss aborts with the batch") {
  T2IModel<float> model(Vocabulary::captions(), test::tiny_text(), test::tiny_model(), 4);
  const auto data = test::tiny_dataset(model, 2, 4, 1);
  model.params().get("backbone.head.weight").mutable_data()[0] = NAN;
  Trainer trainer(model, TrainConfig{});
  Rng rng(1);
  BatchOptions opt;
  opt.null_ids = model.vocab().null_ids(model.text_config().max_len);
  const auto batch = make_batch(data, opt, rng);
  try {
    trainer.step(batch);
    FAIL("expected NonFiniteLoss");
  } catch (const NonFiniteLoss& e) {
    const auto replay = TrainBatch::from_json(e.batch());
    CHECK(replay.masked == batch.masked);
    CHECK(replay.truth == batch.truth);
    CHECK(replay.text_ids == batch.text_ids);
    CHECK(replay.bundles[0].rate.level == batch.bundles[0].rate.level);
    CHECK(replay.bundles[1].micro.preference == batch.bundles[1].micro.preference);
  }
}

TEST_CASE("train config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.check());
  CHECK(TrainConfig::from_json(c.to_json()).to_json() == c.to_json());
  c.cond_dropout_p = 1.0;
  CHECK_THROWS(c.check());
  c = {};
  c.grad_clip_norm = 0;
  CHECK_THROWS(c.check());
}
