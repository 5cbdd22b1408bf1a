#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mim/ops.h"
#include "mim/rng.h"
#include "mim/tensor.h"

namespace mim {

/// Named, ordered collection of trainable leaves. Layers keep handles that
/// alias the entries here, so loading values in place updates the model.
template <typename T>
class ParamStore {
 public:
  BasicTensor<T> add(const std::string& name, Shape shape,
                     std::vector<T> values);
  BasicTensor<T> add_zeros(const std::string& name, Shape shape);
  BasicTensor<T> add_full(const std::string& name, Shape shape, T value);
  /// N(0, stddev²) entries.
  BasicTensor<T> add_normal(const std::string& name, Shape shape, T stddev,
                            Rng& rng);

  const std::vector<std::pair<std::string, BasicTensor<T>>>& items() const {
    return items_;
  }
  BasicTensor<T> get(const std::string& name) const;
  bool contains(const std::string& name) const {
    return index_.contains(name);
  }
  std::vector<BasicTensor<T>> tensors() const;
  std::size_t total_elements() const;
  void zero_grad();

  /// Copies values by name from another store (converting precision).
  /// Names and shapes must match exactly.
  template <typename U>
  void copy_from(const ParamStore<U>& other) {
    if (other.items().size() != items_.size()) {
      throw ShapeError("parameter stores differ in size");
    }
    for (const auto& [name, src] : other.items()) {
      auto dst = get(name);
      if (dst.shape() != src.shape()) {
        throw ShapeError("parameter " + name + ": shape " +
                         shape_str(src.shape()) + " vs " +
                         shape_str(dst.shape()));
      }
      auto out = dst.mutable_data();
      auto in = src.data();
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(in[i]);
    }
  }

 private:
  std::vector<std::pair<std::string, BasicTensor<T>>> items_;
  std::map<std::string, std::size_t> index_;
};

/// Dense layer with weight [in, out].
template <typename T>
struct Linear {
  BasicTensor<T> weight;
  BasicTensor<T> bias;  // may be undefined

  Linear() = default;
  Linear(ParamStore<T>& store, const std::string& name, std::int64_t in,
         std::int64_t out, Rng& rng, bool with_bias = true);
  /// All-zero weight and bias.
  static Linear zeros(ParamStore<T>& store, const std::string& name,
                      std::int64_t in, std::int64_t out);

  BasicTensor<T> operator()(const BasicTensor<T>& x) const {
    return linear(x, weight, bias);
  }
};

/// Two-layer GELU MLP.
template <typename T>
struct FeedForward {
  Linear<T> up, down;

  FeedForward() = default;
  FeedForward(ParamStore<T>& store, const std::string& name,
              std::int64_t width, std::int64_t hidden, Rng& rng);
  BasicTensor<T> operator()(const BasicTensor<T>& x) const {
    return down(gelu(up(x)));
  }
};

/// x·(1 + scale) + shift, with shift/scale: [B, D] broadcast over the
/// sequence axis of x: [B, S, D].
template <typename T>
BasicTensor<T> modulate(const BasicTensor<T>& x, const BasicTensor<T>& shift,
                        const BasicTensor<T>& scale_);

}  // namespace mim
