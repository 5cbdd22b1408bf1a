#pragma once

#include <cstdint>
#include <vector>

#include "mim/ops.h"

namespace mim {

/// Rotates consecutive pairs (x_2i, x_2i+1) of the last axis by
/// pos·base^(−2i/d). x: [..., S, d] with positions.size() == S.
template <typename T>
BasicTensor<T> rope_rotate(const BasicTensor<T>& x, const std::vector<std::int64_t>& positions,
                           double base);

/// softmax(q·kᵀ/√d + bias) over keys. q: [B, H, S, d], k: [B, H, S', d],
/// bias broadcastable to [B, H, S, S'] or undefined.
template <typename T>
BasicTensor<T> attention_weights(const BasicTensor<T>& q, const BasicTensor<T>& k,
                                 const BasicTensor<T>& bias);

template <typename T>
BasicTensor<T> attention(const BasicTensor<T>& q, const BasicTensor<T>& k,
                         const BasicTensor<T>& v, const BasicTensor<T>& bias) {
  return matmul(attention_weights(q, k, bias), v);
}

/// [B, S, H·d] -> [B, H, S, d]
template <typename T>
BasicTensor<T> split_heads(const BasicTensor<T>& x, int heads);
/// [B, H, S, d] -> [B, S, H·d]
template <typename T>
BasicTensor<T> merge_heads(const BasicTensor<T>& x);

}  // namespace mim
