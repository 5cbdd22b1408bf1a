#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mim/tensor.h"

// Differentiable operations. All are deterministic: reductions run in a fixed
// order that does not depend on batch size.
namespace mim {

// Elementwise with numpy-style broadcasting.
template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& x, T factor);
template <typename T>
BasicTensor<T> add_scalar(const BasicTensor<T>& x, T value);

/// a: [..., m, k], b: [..., k, n] with equal leading extents, or b: [k, n]
/// shared across the leading extents of a.
template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// x: [..., in], weight: [in, out], bias: [out] or undefined.
template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias);

/// One extent may be -1.
template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape);
template <typename T>
BasicTensor<T> permute(const BasicTensor<T>& x, const std::vector<int>& axes);
/// Swaps the last two axes.
template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& x);

template <typename T>
BasicTensor<T> slice(const BasicTensor<T>& x, int axis, std::int64_t start,
                     std::int64_t length);
template <typename T>
BasicTensor<T> concat(const std::vector<BasicTensor<T>>& xs, int axis);

/// Max-subtracted softmax. Non-finite input is rejected.
template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& x, int axis = -1);

/// gain ⊙ x / sqrt(mean(x²) + eps) over the last axis.
template <typename T>
BasicTensor<T> rms_norm(const BasicTensor<T>& x, const BasicTensor<T>& gain,
                        T eps);

/// Normalization over the last axis; gain and bias may be undefined.
template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gain,
                          const BasicTensor<T>& bias, T eps);

/// tanh approximation.
template <typename T>
BasicTensor<T> gelu(const BasicTensor<T>& x);
template <typename T>
BasicTensor<T> silu(const BasicTensor<T>& x);

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x);
template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& x);
template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x, int axis, bool keepdim);
template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& x, int axis, bool keepdim);

/// Rows of `table` ([V, D]) selected by ids; result [ids.size(), D].
/// Backward scatter-adds into the table.
template <typename T>
BasicTensor<T> embedding(const BasicTensor<T>& table,
                         std::span<const std::int64_t> ids);

/// Σ wᵢ·CE(logitsᵢ, targetᵢ) / Σ wᵢ over rows with wᵢ > 0; rows with zero
/// weight are skipped entirely. logits: [N, K].
template <typename T>
BasicTensor<T> cross_entropy(const BasicTensor<T>& logits,
                             std::span<const std::int64_t> targets,
                             std::span<const T> weights);

/// Cross-correlation. x: [B, C, H, W], weight: [O, C, k, k], bias: [O] or
/// undefined.
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias, int stride, int pad);

/// Adjoint of conv2d. x: [B, C, H, W], weight: [C, O, k, k]; output extent
/// (H - 1)·stride - 2·pad + k.
template <typename T>
BasicTensor<T> conv_transpose2d(const BasicTensor<T>& x,
                                const BasicTensor<T>& weight,
                                const BasicTensor<T>& bias, int stride,
                                int pad);

template <typename T>
BasicTensor<T> detach(const BasicTensor<T>& x) {
  return x.detach();
}

/// mean((a - b)²)
template <typename T>
BasicTensor<T> mse(const BasicTensor<T>& a, const BasicTensor<T>& b);

namespace kernels {

/// C[M×N] (+)= A[M×K]·B[K×N], row-major. Each output element accumulates
/// over k in increasing order regardless of M.
template <typename T>
void gemm_nn(std::int64_t m, std::int64_t n, std::int64_t k, const T* a,
             const T* b, T* c, bool accumulate);
/// C[M×N] (+)= A[K×M]ᵀ·B[K×N]
template <typename T>
void gemm_tn(std::int64_t m, std::int64_t n, std::int64_t k, const T* a,
             const T* b, T* c, bool accumulate);
/// C[M×N] (+)= A[M×K]·B[N×K]ᵀ
template <typename T>
void gemm_nt(std::int64_t m, std::int64_t n, std::int64_t k, const T* a,
             const T* b, T* c, bool accumulate);

}  // namespace kernels

}  // namespace mim
