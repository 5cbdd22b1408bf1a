#include <algorithm>
#include <cmath>
#include <cstring>
#if defined(__AVX512F__)
#include <immintrin.h>
#endif
#include <vector>

#include "mim/ops.h"

namespace mim::kernels {

namespace {

// Every C element is updated as c = fma(a[i,p], b[p,j], c) for p = 0..k-1,
// whichever path handles it, so results do not depend on M or on blocking.
template <typename T, int R, int W>
inline void micro(std::int64_t k, const T* a, std::int64_t ars, std::int64_t aks,
                  const T* b, std::int64_t ldb, T* c, std::int64_t ldc) {
  T acc[R][W];
  for (int r = 0; r < R; ++r)
    for (int j = 0; j < W; ++j) acc[r][j] = c[r * ldc + j];
  for (std::int64_t p = 0; p < k; ++p) {
    const T* __restrict br = b + p * ldb;
    for (int r = 0; r < R; ++r) {
      const T x = a[r * ars + p * aks];
      for (int j = 0; j < W; ++j) acc[r][j] = std::fma(x, br[j], acc[r][j]);
    }
  }
  for (int r = 0; r < R; ++r)
    for (int j = 0; j < W; ++j) c[r * ldc + j] = acc[r][j];
}

#if defined(__AVX512F__)
template <int R, int V>
inline void micro_ps(std::int64_t k, const float* a, std::int64_t ars,
                     std::int64_t aks, const float* b, std::int64_t ldb, float* c,
                     std::int64_t ldc) {
  __m512 acc[R][V];
  for (int r = 0; r < R; ++r)
    for (int v = 0; v < V; ++v) acc[r][v] = _mm512_loadu_ps(c + r * ldc + 16 * v);
  for (std::int64_t p = 0; p < k; ++p) {
    __m512 bv[V];
    for (int v = 0; v < V; ++v) bv[v] = _mm512_loadu_ps(b + p * ldb + 16 * v);
    for (int r = 0; r < R; ++r) {
      const __m512 x = _mm512_set1_ps(a[r * ars + p * aks]);
      for (int v = 0; v < V; ++v) acc[r][v] = _mm512_fmadd_ps(x, bv[v], acc[r][v]);
    }
  }
  for (int r = 0; r < R; ++r)
    for (int v = 0; v < V; ++v) _mm512_storeu_ps(c + r * ldc + 16 * v, acc[r][v]);
}

template <int R, int V>
inline void micro_pd(std::int64_t k, const double* a, std::int64_t ars,
                     std::int64_t aks, const double* b, std::int64_t ldb, double* c,
                     std::int64_t ldc) {
  __m512d acc[R][V];
  for (int r = 0; r < R; ++r)
    for (int v = 0; v < V; ++v) acc[r][v] = _mm512_loadu_pd(c + r * ldc + 8 * v);
  for (std::int64_t p = 0; p < k; ++p) {
    __m512d bv[V];
    for (int v = 0; v < V; ++v) bv[v] = _mm512_loadu_pd(b + p * ldb + 8 * v);
    for (int r = 0; r < R; ++r) {
      const __m512d x = _mm512_set1_pd(a[r * ars + p * aks]);
      for (int v = 0; v < V; ++v) acc[r][v] = _mm512_fmadd_pd(x, bv[v], acc[r][v]);
    }
  }
  for (int r = 0; r < R; ++r)
    for (int v = 0; v < V; ++v) _mm512_storeu_pd(c + r * ldc + 8 * v, acc[r][v]);
}

template <>
inline void micro<float, 6, 32>(std::int64_t k, const float* a, std::int64_t ars,
    std::int64_t aks, const float* b, std::int64_t ldb, float* c, std::int64_t ldc) {
  micro_ps<6, 2>(k, a, ars, aks, b, ldb, c, ldc);
}
template <>
inline void micro<float, 1, 32>(std::int64_t k, const float* a, std::int64_t ars,
    std::int64_t aks, const float* b, std::int64_t ldb, float* c, std::int64_t ldc) {
  micro_ps<1, 2>(k, a, ars, aks, b, ldb, c, ldc);
}
template <>
inline void micro<float, 6, 16>(std::int64_t k, const float* a, std::int64_t ars,
    std::int64_t aks, const float* b, std::int64_t ldb, float* c, std::int64_t ldc) {
  micro_ps<6, 1>(k, a, ars, aks, b, ldb, c, ldc);
}
template <>
inline void micro<float, 1, 16>(std::int64_t k, const float* a, std::int64_t ars,
    std::int64_t aks, const float* b, std::int64_t ldb, float* c, std::int64_t ldc) {
  micro_ps<1, 1>(k, a, ars, aks, b, ldb, c, ldc);
}
template <>
inline void micro<double, 6, 16>(std::int64_t k, const double* a, std::int64_t ars,
    std::int64_t aks, const double* b, std::int64_t ldb, double* c, std::int64_t ldc) {
  micro_pd<6, 2>(k, a, ars, aks, b, ldb, c, ldc);
}
template <>
inline void micro<double, 1, 16>(std::int64_t k, const double* a, std::int64_t ars,
    std::int64_t aks, const double* b, std::int64_t ldb, double* c, std::int64_t ldc) {
  micro_pd<1, 2>(k, a, ars, aks, b, ldb, c, ldc);
}
template <>
inline void micro<double, 6, 8>(std::int64_t k, const double* a, std::int64_t ars,
    std::int64_t aks, const double* b, std::int64_t ldb, double* c, std::int64_t ldc) {
  micro_pd<6, 1>(k, a, ars, aks, b, ldb, c, ldc);
}
template <>
inline void micro<double, 1, 8>(std::int64_t k, const double* a, std::int64_t ars,
    std::int64_t aks, const double* b, std::int64_t ldb, double* c, std::int64_t ldc) {
  micro_pd<1, 1>(k, a, ars, aks, b, ldb, c, ldc);
}
#endif

template <typename T>
void edge(std::int64_t rows, std::int64_t cols, std::int64_t k, const T* a,
          std::int64_t ars, std::int64_t aks, const T* b, std::int64_t ldb, T* c,
          std::int64_t ldc) {
  for (std::int64_t i = 0; i < rows; ++i) {
    for (std::int64_t j = 0; j < cols; ++j) {
      T acc = c[i * ldc + j];
      for (std::int64_t p = 0; p < k; ++p) {
        acc = std::fma(a[i * ars + p * aks], b[p * ldb + j], acc);
      }
      c[i * ldc + j] = acc;
    }
  }
}

// A element (i, p) lives at a[i * ars + p * aks].
template <typename T>
void gemm_block(std::int64_t m, std::int64_t n, std::int64_t k, const T* a,
                std::int64_t ars, std::int64_t aks, const T* b, T* c) {
  constexpr int R = 6;
  constexpr int W = 128 / sizeof(T);
  constexpr int W2 = W / 4;
  std::int64_t j = 0;
  for (; j + W <= n; j += W) {
    std::int64_t i = 0;
    for (; i + R <= m; i += R)
      micro<T, R, W>(k, a + i * ars, ars, aks, b + j, n, c + i * n + j, n);
    for (; i < m; ++i) micro<T, 1, W>(k, a + i * ars, ars, aks, b + j, n, c + i * n + j, n);
  }
  for (; j + W2 <= n; j += W2) {
    std::int64_t i = 0;
    for (; i + R <= m; i += R)
      micro<T, R, W2>(k, a + i * ars, ars, aks, b + j, n, c + i * n + j, n);
    for (; i < m; ++i) micro<T, 1, W2>(k, a + i * ars, ars, aks, b + j, n, c + i * n + j, n);
  }
  if (j < n) edge(m, n - j, k, a, ars, aks, b + j, n, c + j, n);
}

// out[cols×rows] = in[rows×cols]ᵀ, in tiles.
template <typename T>
void transpose_into(std::int64_t rows, std::int64_t cols, const T* in, T* out) {
  constexpr std::int64_t kTile = 32;
  for (std::int64_t r0 = 0; r0 < rows; r0 += kTile) {
    const std::int64_t r1 = std::min(rows, r0 + kTile);
    for (std::int64_t c0 = 0; c0 < cols; c0 += kTile) {
      const std::int64_t c1 = std::min(cols, c0 + kTile);
      for (std::int64_t r = r0; r < r1; ++r)
        for (std::int64_t c = c0; c < c1; ++c) out[c * rows + r] = in[r * cols + c];
    }
  }
}

}  // namespace

template <typename T>
void gemm_nn(std::int64_t m, std::int64_t n, std::int64_t k, const T* a,
             const T* b, T* c, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, T(0));
  if (m == 0 || n == 0 || k == 0) return;
  gemm_block(m, n, k, a, k, std::int64_t{1}, b, c);
}

template <typename T>
void gemm_tn(std::int64_t m, std::int64_t n, std::int64_t k, const T* a,
             const T* b, T* c, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, T(0));
  if (m == 0 || n == 0 || k == 0) return;
  gemm_block(m, n, k, a, std::int64_t{1}, m, b, c);
}

template <typename T>
void gemm_nt(std::int64_t m, std::int64_t n, std::int64_t k, const T* a,
             const T* b, T* c, bool accumulate) {
  std::vector<T> bt(static_cast<std::size_t>(k * n));
  transpose_into(n, k, b, bt.data());
  gemm_nn(m, n, k, a, bt.data(), c, accumulate);
}

#define MIM_INSTANTIATE_GEMM(T)                                              \
  template void gemm_nn<T>(std::int64_t, std::int64_t, std::int64_t,         \
                           const T*, const T*, T*, bool);                    \
  template void gemm_tn<T>(std::int64_t, std::int64_t, std::int64_t,         \
                           const T*, const T*, T*, bool);                    \
  template void gemm_nt<T>(std::int64_t, std::int64_t, std::int64_t,         \
                           const T*, const T*, T*, bool);

MIM_INSTANTIATE_GEMM(float)
MIM_INSTANTIATE_GEMM(double)

#undef MIM_INSTANTIATE_GEMM

}  // namespace mim::kernels
