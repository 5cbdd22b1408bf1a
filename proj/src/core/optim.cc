#include "mim/optim.h"

#include <cmath>

namespace mim {

template <typename T>
AdamW<T>::AdamW(std::vector<BasicTensor<T>> params, AdamWConfig config)
    : params_(std::move(params)), config_(config) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.emplace_back(static_cast<std::size_t>(p.numel()), T(0));
    v_.emplace_back(static_cast<std::size_t>(p.numel()), T(0));
  }
}

template <typename T>
void AdamW<T>::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  const T lr = static_cast<T>(config_.lr);
  const T b1 = static_cast<T>(config_.beta1);
  const T b2 = static_cast<T>(config_.beta2);
  const T eps = static_cast<T>(config_.eps);
  const T decay = static_cast<T>(config_.lr * config_.weight_decay);
  const T inv_bc1 = static_cast<T>(1.0 / bc1);
  const T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    if (!p.has_grad() || p.grad().empty()) continue;
    auto w = p.mutable_data();
    auto g = p.grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = b1 * m[j] + (T(1) - b1) * g[j];
      v[j] = b2 * v[j] + (T(1) - b2) * g[j] * g[j];
      const T mhat = m[j] * inv_bc1;
      const T denom = std::sqrt(v[j]) * inv_sqrt_bc2 + eps;
      w[j] -= lr * (mhat / denom) + decay * w[j];
    }
  }
}

template <typename T>
double global_grad_norm(const std::vector<BasicTensor<T>>& params) {
  double total = 0;
  for (const auto& p : params) {
    for (T g : p.grad()) total += static_cast<double>(g) * static_cast<double>(g);
  }
  return std::sqrt(total);
}

template <typename T>
double clip_grad_norm(const std::vector<BasicTensor<T>>& params,
                      double max_norm) {
  const double norm = global_grad_norm(params);
  if (norm > max_norm && norm > 0) {
    const T factor = static_cast<T>(max_norm / norm);
    for (auto p : params) {
      if (p.grad().empty()) continue;
      for (auto& g : p.mutable_grad()) g *= factor;
    }
  }
  return norm;
}

template class AdamW<float>;
template class AdamW<double>;
template double global_grad_norm(const std::vector<BasicTensor<float>>&);
template double global_grad_norm(const std::vector<BasicTensor<double>>&);
template double clip_grad_norm(const std::vector<BasicTensor<float>>&, double);
template double clip_grad_norm(const std::vector<BasicTensor<double>>&, double);

}  // namespace mim
