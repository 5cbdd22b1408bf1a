#include "mim/trainer.h"

#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "mim/checkpoint.h"

namespace mim {

void TrainConfig::check() const {
  if (batch < 1) throw std::invalid_argument("train: batch must be >= 1");
  if (steps < 0) throw std::invalid_argument("train: steps must be >= 0");
  if (!(lr >= 0) || !std::isfinite(lr)) throw std::invalid_argument("train: lr must be finite and >= 0");
  if (!(cond_dropout_p >= 0 && cond_dropout_p < 1)) {
    throw std::invalid_argument("train: cond_dropout_p must lie in [0, 1)");
  }
  if (!(grad_clip_norm > 0)) throw std::invalid_argument("train: grad_clip_norm must be > 0");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"batch", batch},
          {"steps", steps},
          {"lr", format_real(lr)},
          {"cond_dropout_p", format_real(cond_dropout_p)},
          {"grad_clip_norm", format_real(grad_clip_norm)},
          {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.batch = j.at("batch").get<int>();
  c.steps = j.at("steps").get<int>();
  c.lr = parse_real(j.at("lr").get<std::string>());
  c.cond_dropout_p = parse_real(j.at("cond_dropout_p").get<std::string>());
  c.grad_clip_norm = parse_real(j.at("grad_clip_norm").get<std::string>());
  c.seed = j.at("seed").get<std::uint64_t>();
  c.check();
  return c;
}

namespace {

nlohmann::json grid_json(const TokenGrid& g) {
  return {{"h", g.height}, {"w", g.width}, {"k", g.codebook_size}, {"indices", g.indices}};
}

TokenGrid grid_from(const nlohmann::json& j) {
  TokenGrid g(j.at("h").get<int>(), j.at("w").get<int>(), j.at("k").get<int>());
  g.indices = j.at("indices").get<std::vector<std::int64_t>>();
  g.check();
  return g;
}

}  // namespace

nlohmann::json TrainBatch::to_json() const {
  nlohmann::json items = nlohmann::json::array();
  for (std::size_t b = 0; b < size(); ++b) {
    const auto& m = bundles[b].micro;
    items.push_back({{"truth", grid_json(truth[b])},
                     {"masked", grid_json(masked[b])},
                     {"r", rates[b].r},
                     {"level", rates[b].level},
                     {"text_ids", text_ids[b]},
                     {"nulled", static_cast<bool>(nulled[b])},
                     {"cond_level", bundles[b].rate.level},
                     {"cond_r", bundles[b].rate.r},
                     {"micro",
                      {m.original_h, m.original_w, m.crop_x, m.crop_y, m.preference}}});
  }
  return {{"items", items}};
}

TrainBatch TrainBatch::from_json(const nlohmann::json& j) {
  TrainBatch batch;
  for (const auto& it : j.at("items")) {
    batch.truth.push_back(grid_from(it.at("truth")));
    batch.masked.push_back(grid_from(it.at("masked")));
    batch.rates.push_back({it.at("r").get<double>(), it.at("level").get<int>()});
    batch.text_ids.push_back(it.at("text_ids").get<std::vector<std::int64_t>>());
    batch.nulled.push_back(it.at("nulled").get<bool>());
    ConditionBundle bundle;
    const auto micro = it.at("micro").get<std::vector<double>>();
    if (micro.size() != 5) throw std::invalid_argument("batch: micro needs 5 values");
    bundle.micro = {micro[0], micro[1], micro[2], micro[3], micro[4]};
    bundle.rate = {it.at("cond_r").get<double>(), it.at("cond_level").get<int>()};
    batch.bundles.push_back(bundle);
  }
  return batch;
}

TrainBatch make_batch(std::span<const TrainItem> items, const BatchOptions& options, Rng& rng) {
  TrainBatch batch;
  for (const auto& item : items) {
    const std::int64_t n = item.tokens.size();
    if (n == 0) throw std::invalid_argument("make_batch: empty token grid");
    const MaskRate rate =
        options.forced_rate ? make_rate(*options.forced_rate) : sample_mask_rate(rng);
    const std::int64_t count =
        std::clamp<std::int64_t>(std::llround(rate.r * static_cast<double>(n)), 1, n);

    std::vector<std::int64_t> cells(static_cast<std::size_t>(n));
    std::iota(cells.begin(), cells.end(), 0);
    TokenGrid masked = item.tokens;
    for (std::int64_t i = 0; i < count; ++i) {
      const auto j = i + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(n - i)));
      std::swap(cells[i], cells[j]);
      masked.indices[cells[i]] = masked.mask_index();
    }

    const bool drop = options.cond_dropout_p > 0 && rng.uniform() < options.cond_dropout_p;
    ConditionBundle bundle;
    bundle.micro.original_h = item.image_size;
    bundle.micro.original_w = item.image_size;
    bundle.micro.preference = 0.5 + 0.5 * rng.uniform();
    bundle.rate = make_rate(static_cast<double>(count) / static_cast<double>(n));

    batch.truth.push_back(item.tokens);
    batch.masked.push_back(std::move(masked));
    batch.rates.push_back(rate);
    batch.text_ids.push_back(drop ? options.null_ids : item.text_ids);
    batch.nulled.push_back(drop);
    batch.bundles.push_back(bundle);
  }
  return batch;
}

template <typename T>
BasicTensor<T> masked_ce_loss(const BasicTensor<T>& logits, const TokenGrid& truth,
                              const std::vector<bool>& mask) {
  if (logits.rank() != 2 || logits.size(0) != truth.size() ||
      static_cast<std::int64_t>(mask.size()) != truth.size()) {
    throw ShapeError("masked_ce_loss: logits " + shape_str(logits.shape()) + " for " +
                     std::to_string(truth.size()) + " cells");
  }
  std::vector<T> w(mask.size());
  bool any = false;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    w[i] = mask[i] ? T(1) : T(0);
    any = any || mask[i];
  }
  if (!any) throw std::invalid_argument("masked_ce_loss: no masked cells");
  return cross_entropy(logits, std::span<const std::int64_t>(truth.indices),
                       std::span<const T>(w));
}

template <typename T>
BasicTensor<T> batch_masked_ce(const BasicTensor<T>& logits, const TrainBatch& batch) {
  const auto b = static_cast<std::int64_t>(batch.size());
  if (logits.rank() != 3 || logits.size(0) != b) {
    throw ShapeError("batch_masked_ce: logits " + shape_str(logits.shape()));
  }
  const std::int64_t n = logits.size(1);
  std::vector<std::int64_t> targets;
  std::vector<T> w;
  for (std::int64_t i = 0; i < b; ++i) {
    const auto& masked = batch.masked[i];
    if (masked.size() != n) throw ShapeError("batch_masked_ce: grid size mismatch");
    const std::int64_t m = masked.masked_count();
    if (m == 0) throw std::invalid_argument("batch_masked_ce: item without masked cells");
    for (std::int64_t c = 0; c < n; ++c) {
      targets.push_back(batch.truth[i].indices[c]);
      w.push_back(masked.masked(c) ? T(1) / static_cast<T>(m) : T(0));
    }
  }
  return cross_entropy(reshape(logits, {b * n, logits.size(2)}),
                       std::span<const std::int64_t>(targets), std::span<const T>(w));
}

Trainer::Trainer(T2IModel<float>& m, const TrainConfig& c)
    : model(m),
      config(c),
      params(m.params().tensors()),
      optimizer(params, AdamWConfig{.lr = c.lr, .weight_decay = 0.0}) {
  config.check();
  for (auto& p : params) p.set_requires_grad(true);
}

StepResult Trainer::step(const TrainBatch& batch) {
  model.params().zero_grad();
  const auto text = model.encode_ids(batch.text_ids);
  const auto logits = model.logits(batch.masked, text, batch.bundles);
  const auto loss = batch_masked_ce(logits, batch);
  StepResult r;
  r.loss = loss.item();
  if (!std::isfinite(r.loss)) {
    std::ostringstream msg;
    msg << "train step " << optimizer.steps() << ": non-finite loss " << r.loss;
    throw NonFiniteLoss(msg.str(), batch.to_json());
  }
  loss.backward();
  r.grad_norm = clip_grad_norm(params, config.grad_clip_norm);
  optimizer.step();
  return r;
}

TrainResult train_t2i(T2IModel<float>& model, const std::vector<TrainItem>& dataset,
                      const TrainConfig& config, const TrainHooks& hooks) {
  config.check();
  if (dataset.empty()) throw std::invalid_argument("train_t2i: empty dataset");
  Trainer trainer(model, config);
  Rng rng(config.seed);
  BatchOptions options;
  options.cond_dropout_p = config.cond_dropout_p;
  options.null_ids = model.vocab().null_ids(model.text_config().max_len);

  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  TrainResult result;
  for (int step = 0; step < config.steps; ++step) {
    std::vector<TrainItem> items;
    while (static_cast<int>(items.size()) < config.batch) {
      if (cursor == order.size()) {
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
        cursor = 0;
      }
      items.push_back(dataset[order[cursor++]]);
    }
    const auto batch = make_batch(items, options, rng);
    StepResult r;
    try {
      r = trainer.step(batch);
    } catch (const NonFiniteLoss& e) {
      if (!hooks.failed_batch_path.empty()) {
        std::ofstream out(hooks.failed_batch_path);
        out << e.batch().dump() << "\n";
      }
      throw;
    }
    for (bool n : batch.nulled) result.nulled_items += n;
    result.items_seen += static_cast<std::int64_t>(batch.size());
    result.losses.push_back(r.loss);
    result.grad_norms.push_back(r.grad_norm);
    if (hooks.on_step) hooks.on_step(step, r);
    if (hooks.stop && hooks.stop(step)) break;
  }
  return result;
}

double evaluate_masked_ce(const T2IModel<float>& model, const std::vector<TrainItem>& dataset,
                          int draws, std::uint64_t seed) {
  if (dataset.empty() || draws < 1) throw std::invalid_argument("evaluate_masked_ce: nothing to do");
  NoGradGuard guard;
  Rng rng(seed);
  BatchOptions options;
  options.cond_dropout_p = 0;
  double total = 0;
  for (int d = 0; d < draws; ++d) {
    const auto batch = make_batch(dataset, options, rng);
    const auto text = model.encode_ids(batch.text_ids);
    total += batch_masked_ce(model.logits(batch.masked, text, batch.bundles), batch).item();
  }
  return total / draws;
}

std::string metrics_line(int step, const StepResult& r) {
  return std::to_string(step) + "," + format_real(r.loss) + "," + format_real(r.grad_norm);
}

template Tensor masked_ce_loss(const Tensor&, const TokenGrid&, const std::vector<bool>&);
template Tensor64 masked_ce_loss(const Tensor64&, const TokenGrid&, const std::vector<bool>&);
template Tensor batch_masked_ce(const Tensor&, const TrainBatch&);
template Tensor64 batch_masked_ce(const Tensor64&, const TrainBatch&);

}  // namespace mim
