#include "mim/attention.h"

#include <cmath>
#include <stdexcept>
#include <string>

namespace mim {

namespace {

template <typename T>
void rotate(std::span<const T> in, std::span<T> out, const std::vector<T>& cos_t,
            const std::vector<T>& sin_t, std::int64_t seq, std::int64_t d, T sign) {
  const std::int64_t half = d / 2;
  const std::int64_t rows = static_cast<std::int64_t>(in.size()) / d;
  for (std::int64_t r = 0; r < rows; ++r) {
    const std::int64_t s = r % seq;
    const T* x = in.data() + r * d;
    T* y = out.data() + r * d;
    for (std::int64_t i = 0; i < half; ++i) {
      const T c = cos_t[s * half + i], sn = sign * sin_t[s * half + i];
      y[2 * i] += x[2 * i] * c - x[2 * i + 1] * sn;
      y[2 * i + 1] += x[2 * i] * sn + x[2 * i + 1] * c;
    }
  }
}

}  // namespace

template <typename T>
BasicTensor<T> rope_rotate(const BasicTensor<T>& x, const std::vector<std::int64_t>& positions,
                           double base) {
  if (x.rank() < 2) throw ShapeError("rope_rotate: expected [..., S, d]");
  const std::int64_t d = x.size(-1), seq = x.size(-2);
  if (d % 2 != 0) {
    throw ShapeError("rope_rotate: head dimension must be even, got " + std::to_string(d));
  }
  if (static_cast<std::int64_t>(positions.size()) != seq) {
    throw ShapeError("rope_rotate: " + std::to_string(positions.size()) + " positions for " +
                     std::to_string(seq) + " rows");
  }
  const std::int64_t half = d / 2;
  std::vector<T> cos_t(seq * half), sin_t(seq * half);
  for (std::int64_t s = 0; s < seq; ++s) {
    for (std::int64_t i = 0; i < half; ++i) {
      const double angle = static_cast<double>(positions[s]) *
                           std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(d));
      cos_t[s * half + i] = static_cast<T>(std::cos(angle));
      sin_t[s * half + i] = static_cast<T>(std::sin(angle));
    }
  }
  std::vector<T> out(x.data().size(), T(0));
  rotate<T>(x.data(), out, cos_t, sin_t, seq, d, T(1));
  return make_result<T>(x.shape(), std::move(out), {x}, "rope_rotate",
                        [cos_t, sin_t, seq, d](Node<T>& self) {
                          auto& g = self.inputs[0]->ensure_grad();
                          rotate<T>(self.grad, g, cos_t, sin_t, seq, d, T(-1));
                        });
}

template <typename T>
BasicTensor<T> attention_weights(const BasicTensor<T>& q, const BasicTensor<T>& k,
                                 const BasicTensor<T>& bias) {
  const T inv = static_cast<T>(1.0 / std::sqrt(static_cast<double>(q.size(-1))));
  auto scores = scale(matmul(q, transpose(k)), inv);
  if (bias.defined()) scores = add(scores, bias);
  return softmax(scores, -1);
}

template <typename T>
BasicTensor<T> split_heads(const BasicTensor<T>& x, int heads) {
  const auto b = x.size(0), s = x.size(1), w = x.size(2);
  if (w % heads != 0) throw ShapeError("split_heads: width not divisible by head count");
  return permute(reshape(x, {b, s, heads, w / heads}), {0, 2, 1, 3});
}

template <typename T>
BasicTensor<T> merge_heads(const BasicTensor<T>& x) {
  const auto b = x.size(0), h = x.size(1), s = x.size(2), d = x.size(3);
  return reshape(permute(x, {0, 2, 1, 3}), {b, s, h * d});
}

#define MIM_INSTANTIATE_ATTENTION(T)                                                       \
  template BasicTensor<T> rope_rotate<T>(const BasicTensor<T>&,                            \
                                         const std::vector<std::int64_t>&, double);        \
  template BasicTensor<T> attention_weights<T>(const BasicTensor<T>&, const BasicTensor<T>&, \
                                               const BasicTensor<T>&);                     \
  template BasicTensor<T> split_heads<T>(const BasicTensor<T>&, int);                      \
  template BasicTensor<T> merge_heads<T>(const BasicTensor<T>&);

MIM_INSTANTIATE_ATTENTION(float)
MIM_INSTANTIATE_ATTENTION(double)

}  // namespace mim
