#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mim/backbone.h"
#include "mim/optim.h"
#include "mim/t2i.h"
#include "mim/token_grid.h"

namespace mim {

struct TrainConfig {
  int batch = 16;
  int steps = 2000;
  double lr = 1e-4;
  double cond_dropout_p = 0.1;
  double grad_clip_norm = 1.0;
  std::uint64_t seed = 0;

  void check() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

/// One training pair: complete token grid and caption ids.
struct TrainItem {
  TokenGrid tokens;
  std::vector<std::int64_t> text_ids;
  int image_size = 32;
};

struct TrainBatch {
  std::vector<TokenGrid> truth;
  std::vector<TokenGrid> masked;
  std::vector<MaskRate> rates;  // drawn ratios
  std::vector<std::vector<std::int64_t>> text_ids;  // null ids where dropped
  std::vector<bool> nulled;
  std::vector<ConditionBundle> bundles;  // rate = realized masked fraction

  std::size_t size() const { return truth.size(); }
  nlohmann::json to_json() const;
  static TrainBatch from_json(const nlohmann::json& j);
};

struct BatchOptions {
  double cond_dropout_p = 0.1;
  std::vector<std::int64_t> null_ids;
  std::optional<double> forced_rate;  // bypasses sample_mask_rate
};

/// Masks round(r·N) distinct cells per item (at least one), chosen uniformly.
TrainBatch make_batch(std::span<const TrainItem> items, const BatchOptions& options, Rng& rng);

/// Mean cross-entropy over masked cells of one grid. logits: [N, K].
template <typename T>
BasicTensor<T> masked_ce_loss(const BasicTensor<T>& logits, const TokenGrid& truth,
                              const std::vector<bool>& mask);

/// Mean over items of each item's masked-cell mean. logits: [B, N, K].
template <typename T>
BasicTensor<T> batch_masked_ce(const BasicTensor<T>& logits, const TrainBatch& batch);

/// Thrown on a non-finite loss; carries the batch for replay.
class NonFiniteLoss : public NumericError {
 public:
  NonFiniteLoss(const std::string& what, nlohmann::json batch)
      : NumericError(what), batch_(std::move(batch)) {}
  const nlohmann::json& batch() const { return batch_; }

 private:
  nlohmann::json batch_;
};

struct StepResult {
  double loss = 0;
  double grad_norm = 0;  // before clipping
};

/// Optimizer over all model parameters, with the given learning rate.
struct Trainer {
  Trainer(T2IModel<float>& model, const TrainConfig& config);

  StepResult step(const TrainBatch& batch);

  T2IModel<float>& model;
  TrainConfig config;
  std::vector<Tensor> params;
  AdamW<float> optimizer;
};

struct TrainResult {
  std::vector<double> losses;
  std::vector<double> grad_norms;
  std::int64_t nulled_items = 0;
  std::int64_t items_seen = 0;
};

struct TrainHooks {
  std::function<void(int step, const StepResult&)> on_step;
  /// Checked after on_step; true ends training early.
  std::function<bool(int step)> stop;
  /// Where to write a batch that produced a non-finite loss.
  std::string failed_batch_path;
};

/// Draws batches from shuffled passes over the dataset.
TrainResult train_t2i(T2IModel<float>& model, const std::vector<TrainItem>& dataset,
                      const TrainConfig& config, const TrainHooks& hooks = {});

/// Masked cross-entropy of the conditional model (no dropout), averaged over
/// `draws` random maskings of every item.
double evaluate_masked_ce(const T2IModel<float>& model, const std::vector<TrainItem>& dataset,
                          int draws, std::uint64_t seed);

/// Formats "step,loss,grad_norm".
std::string metrics_line(int step, const StepResult& r);

}  // namespace mim
