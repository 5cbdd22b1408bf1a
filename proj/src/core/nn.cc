#include "mim/nn.h"

#include <cmath>

namespace mim {

template <typename T>
BasicTensor<T> ParamStore<T>::add(const std::string& name, Shape shape,
                                  std::vector<T> values) {
  if (index_.contains(name)) {
    throw std::invalid_argument("duplicate parameter name: " + name);
  }
  auto t = BasicTensor<T>::from_data(std::move(shape), std::move(values), true);
  index_[name] = items_.size();
  items_.emplace_back(name, t);
  return t;
}

template <typename T>
BasicTensor<T> ParamStore<T>::add_zeros(const std::string& name, Shape shape) {
  return add_full(name, std::move(shape), T(0));
}

template <typename T>
BasicTensor<T> ParamStore<T>::add_full(const std::string& name, Shape shape,
                                       T value) {
  auto n = static_cast<std::size_t>(shape_numel(shape));
  return add(name, std::move(shape), std::vector<T>(n, value));
}

template <typename T>
BasicTensor<T> ParamStore<T>::add_normal(const std::string& name, Shape shape,
                                         T stddev, Rng& rng) {
  std::vector<T> values(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& v : values) v = static_cast<T>(rng.normal()) * stddev;
  return add(name, std::move(shape), std::move(values));
}

template <typename T>
BasicTensor<T> ParamStore<T>::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) {
    throw std::out_of_range("unknown parameter: " + name);
  }
  return items_[it->second].second;
}

template <typename T>
std::vector<BasicTensor<T>> ParamStore<T>::tensors() const {
  std::vector<BasicTensor<T>> out;
  out.reserve(items_.size());
  for (const auto& item : items_) out.push_back(item.second);
  return out;
}

template <typename T>
std::size_t ParamStore<T>::total_elements() const {
  std::size_t n = 0;
  for (const auto& item : items_) n += static_cast<std::size_t>(item.second.numel());
  return n;
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& item : items_) item.second.zero_grad();
}

template <typename T>
Linear<T>::Linear(ParamStore<T>& store, const std::string& name,
                  std::int64_t in, std::int64_t out, Rng& rng,
                  bool with_bias) {
  const T stddev = static_cast<T>(1.0 / std::sqrt(static_cast<double>(in)));
  weight = store.add_normal(name + ".weight", {in, out}, stddev, rng);
  if (with_bias) bias = store.add_zeros(name + ".bias", {out});
}

template <typename T>
Linear<T> Linear<T>::zeros(ParamStore<T>& store, const std::string& name,
                           std::int64_t in, std::int64_t out) {
  Linear<T> l;
  l.weight = store.add_zeros(name + ".weight", {in, out});
  l.bias = store.add_zeros(name + ".bias", {out});
  return l;
}

template <typename T>
FeedForward<T>::FeedForward(ParamStore<T>& store, const std::string& name,
                            std::int64_t width, std::int64_t hidden, Rng& rng)
    : up(store, name + ".up", width, hidden, rng),
      down(store, name + ".down", hidden, width, rng) {}

template <typename T>
BasicTensor<T> modulate(const BasicTensor<T>& x, const BasicTensor<T>& shift,
                        const BasicTensor<T>& scale_) {
  const std::int64_t b = shift.size(0), d = shift.size(1);
  auto scale3 = reshape(add_scalar(scale_, T(1)), {b, 1, d});
  auto shift3 = reshape(shift, {b, 1, d});
  return add(mul(x, scale3), shift3);
}

template class ParamStore<float>;
template class ParamStore<double>;
template struct Linear<float>;
template struct Linear<double>;
template struct FeedForward<float>;
template struct FeedForward<double>;
template BasicTensor<float> modulate(const BasicTensor<float>&,
                                     const BasicTensor<float>&,
                                     const BasicTensor<float>&);
template BasicTensor<double> modulate(const BasicTensor<double>&,
                                      const BasicTensor<double>&,
                                      const BasicTensor<double>&);

}  // namespace mim
