#pragma once

#include <cstdint>
#include <vector>

#include "mim/tensor.h"

namespace mim {

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Decoupled weight decay Adam. Moments are kept in the parameter precision.
template <typename T>
class AdamW {
 public:
  AdamW(std::vector<BasicTensor<T>> params, AdamWConfig config);

  /// Applies one update from the parameters' current gradients. Parameters
  /// without a gradient are skipped.
  void step();
  void set_lr(double lr) { config_.lr = lr; }
  const AdamWConfig& config() const { return config_; }
  std::int64_t steps() const { return t_; }

 private:
  std::vector<BasicTensor<T>> params_;
  std::vector<std::vector<T>> m_, v_;
  AdamWConfig config_;
  std::int64_t t_ = 0;
};

/// ℓ2 norm over all gradients (missing gradients count as zero).
template <typename T>
double global_grad_norm(const std::vector<BasicTensor<T>>& params);

/// Rescales gradients so their global ℓ2 norm is at most max_norm; returns
/// the norm before clipping.
template <typename T>
double clip_grad_norm(const std::vector<BasicTensor<T>>& params,
                      double max_norm);

}  // namespace mim
