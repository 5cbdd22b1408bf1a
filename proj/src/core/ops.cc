#include "mim/ops.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

namespace mim {

namespace {

int normalize_axis(int axis, int rank, const char* op) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) {
    throw ShapeError(std::string(op) + ": axis out of range for rank " +
                     std::to_string(rank));
  }
  return axis;
}

// Splits a shape around `axis` into (outer, axis extent, inner).
struct AxisSplit {
  std::int64_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, int axis) {
  AxisSplit s;
  for (int i = 0; i < axis; ++i) s.outer *= shape[i];
  s.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

struct Broadcast {
  Shape out;
  std::vector<std::int64_t> stride_a, stride_b;
};

std::vector<std::int64_t> contiguous_strides(const Shape& shape) {
  std::vector<std::int64_t> strides(shape.size(), 1);
  for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i) {
    strides[i] = strides[i + 1] * shape[i + 1];
  }
  return strides;
}

Broadcast broadcast_shapes(const Shape& a, const Shape& b, const char* op) {
  const std::size_t r = std::max(a.size(), b.size());
  Broadcast bc;
  bc.out.assign(r, 1);
  bc.stride_a.assign(r, 0);
  bc.stride_b.assign(r, 0);
  auto sa = contiguous_strides(a);
  auto sb = contiguous_strides(b);
  for (std::size_t i = 0; i < r; ++i) {
    const std::int64_t ai = i + a.size() >= r ? a[i + a.size() - r] : 1;
    const std::int64_t bi = i + b.size() >= r ? b[i + b.size() - r] : 1;
    if (ai != bi && ai != 1 && bi != 1) {
      throw ShapeError(std::string(op) + ": cannot broadcast " +
                       shape_str(a) + " with " + shape_str(b));
    }
    bc.out[i] = ai == 1 ? bi : ai;
    if (i + a.size() >= r && ai != 1) bc.stride_a[i] = sa[i + a.size() - r];
    if (i + b.size() >= r && bi != 1) bc.stride_b[i] = sb[i + b.size() - r];
  }
  return bc;
}

// Calls f(out_offset, a_offset, b_offset, run_length, a_step, b_step) for
// each contiguous run along the last output axis.
template <typename F>
void broadcast_loop(const Broadcast& bc, F&& f) {
  const auto r = static_cast<int>(bc.out.size());
  if (r == 0) {
    f(0, 0, 0, 1, 0, 0);
    return;
  }
  const std::int64_t total = shape_numel(bc.out);
  const std::int64_t inner = bc.out[r - 1];
  if (total == 0) return;
  const std::int64_t outer = total / inner;
  std::vector<std::int64_t> idx(r, 0);
  std::int64_t oa = 0, ob = 0;
  for (std::int64_t o = 0; o < outer; ++o) {
    f(o * inner, oa, ob, inner, bc.stride_a[r - 1], bc.stride_b[r - 1]);
    for (int d = r - 2; d >= 0; --d) {
      ++idx[d];
      oa += bc.stride_a[d];
      ob += bc.stride_b[d];
      if (idx[d] < bc.out[d]) break;
      oa -= bc.stride_a[d] * bc.out[d];
      ob -= bc.stride_b[d] * bc.out[d];
      idx[d] = 0;
    }
  }
}

enum class BinaryKind { kAdd, kSub, kMul };

template <typename T>
BasicTensor<T> binary(const BasicTensor<T>& a, const BasicTensor<T>& b,
                      BinaryKind kind, const char* name) {
  Broadcast bc = broadcast_shapes(a.shape(), b.shape(), name);
  std::vector<T> out(static_cast<std::size_t>(shape_numel(bc.out)));
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  T* po = out.data();
  broadcast_loop(bc, [&](std::int64_t o, std::int64_t ia, std::int64_t ib,
                         std::int64_t n, std::int64_t sa, std::int64_t sb) {
    T* __restrict dst = po + o;
    const T* xa = pa + ia;
    const T* xb = pb + ib;
    if (sa == 1 && sb == 1) {
      switch (kind) {
        case BinaryKind::kAdd: for (std::int64_t j = 0; j < n; ++j) dst[j] = xa[j] + xb[j]; break;
        case BinaryKind::kSub: for (std::int64_t j = 0; j < n; ++j) dst[j] = xa[j] - xb[j]; break;
        case BinaryKind::kMul: for (std::int64_t j = 0; j < n; ++j) dst[j] = xa[j] * xb[j]; break;
      }
      return;
    }
    switch (kind) {
      case BinaryKind::kAdd: for (std::int64_t j = 0; j < n; ++j) dst[j] = xa[j * sa] + xb[j * sb]; break;
      case BinaryKind::kSub: for (std::int64_t j = 0; j < n; ++j) dst[j] = xa[j * sa] - xb[j * sb]; break;
      case BinaryKind::kMul: for (std::int64_t j = 0; j < n; ++j) dst[j] = xa[j * sa] * xb[j * sb]; break;
    }
  });
  return make_result<T>(
      bc.out, std::move(out), {a, b}, name, [bc, kind](Node<T>& self) {
        auto& na = *self.inputs[0];
        auto& nb = *self.inputs[1];
        const T* g = self.grad.data();
        T* ga = na.requires_grad ? na.ensure_grad().data() : nullptr;
        T* gb = nb.requires_grad ? nb.ensure_grad().data() : nullptr;
        const T* va = na.data.data();
        const T* vb = nb.data.data();
        broadcast_loop(bc, [&](std::int64_t o, std::int64_t ia, std::int64_t ib,
                               std::int64_t n, std::int64_t sa, std::int64_t sb) {
          const T* gr = g + o;
          const T sign = kind == BinaryKind::kSub ? T(-1) : T(1);
          if (kind == BinaryKind::kMul) {
            if (ga) for (std::int64_t j = 0; j < n; ++j) ga[ia + j * sa] += gr[j] * vb[ib + j * sb];
            if (gb) for (std::int64_t j = 0; j < n; ++j) gb[ib + j * sb] += gr[j] * va[ia + j * sa];
          } else {
            if (ga) for (std::int64_t j = 0; j < n; ++j) ga[ia + j * sa] += gr[j];
            if (gb) for (std::int64_t j = 0; j < n; ++j) gb[ib + j * sb] += sign * gr[j];
          }
        });
      });
}

template <typename T>
void check_finite(std::span<const T> xs, const char* op) {
  for (T v : xs) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(op) + ": non-finite input");
    }
  }
}

template <typename T>
void im2col(const T* img, std::int64_t channels, std::int64_t h,
            std::int64_t w, int k, int stride, int pad, std::int64_t oh,
            std::int64_t ow, T* cols) {
  for (std::int64_t c = 0; c < channels; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        T* row = cols + ((c * k + ki) * k + kj) * oh * ow;
        for (std::int64_t oy = 0; oy < oh; ++oy) {
          const std::int64_t iy = oy * stride - pad + ki;
          for (std::int64_t ox = 0; ox < ow; ++ox) {
            const std::int64_t ix = ox * stride - pad + kj;
            row[oy * ow + ox] = (iy >= 0 && iy < h && ix >= 0 && ix < w)
                                    ? img[(c * h + iy) * w + ix]
                                    : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* cols, std::int64_t channels, std::int64_t h,
            std::int64_t w, int k, int stride, int pad, std::int64_t oh,
            std::int64_t ow, T* img) {
  for (std::int64_t c = 0; c < channels; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const T* row = cols + ((c * k + ki) * k + kj) * oh * ow;
        for (std::int64_t oy = 0; oy < oh; ++oy) {
          const std::int64_t iy = oy * stride - pad + ki;
          if (iy < 0 || iy >= h) continue;
          for (std::int64_t ox = 0; ox < ow; ++ox) {
            const std::int64_t ix = ox * stride - pad + kj;
            if (ix >= 0 && ix < w) img[(c * h + iy) * w + ix] += row[oy * ow + ox];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return binary(a, b, BinaryKind::kAdd, "add");
}
template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return binary(a, b, BinaryKind::kSub, "sub");
}
template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return binary(a, b, BinaryKind::kMul, "mul");
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& x, T factor) {
  std::vector<T> out(x.data().begin(), x.data().end());
  for (auto& v : out) v *= factor;
  return make_result<T>(x.shape(), std::move(out), {x}, "scale",
                        [factor](Node<T>& self) {
                          auto& gx = self.inputs[0]->ensure_grad();
                          for (std::size_t i = 0; i < gx.size(); ++i) {
                            gx[i] += self.grad[i] * factor;
                          }
                        });
}

template <typename T>
BasicTensor<T> add_scalar(const BasicTensor<T>& x, T value) {
  std::vector<T> out(x.data().begin(), x.data().end());
  for (auto& v : out) v += value;
  return make_result<T>(x.shape(), std::move(out), {x}, "add_scalar",
                        [](Node<T>& self) {
                          auto& gx = self.inputs[0]->ensure_grad();
                          for (std::size_t i = 0; i < gx.size(); ++i) {
                            gx[i] += self.grad[i];
                          }
                        });
}

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw ShapeError("matmul: operands must have rank >= 2, got " +
                     shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const std::int64_t m = a.size(-2), k = a.size(-1);
  const std::int64_t k2 = b.size(-2), n = b.size(-1);
  const bool shared_b = b.rank() == 2;
  bool ok = k == k2;
  if (!shared_b) {
    ok = ok && a.rank() == b.rank() &&
         std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin());
  }
  if (!ok) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()));
  }
  const std::int64_t batches =
      shape_numel(Shape(a.shape().begin(), a.shape().end() - 2));
  Shape out_shape(a.shape().begin(), a.shape().end() - 2);
  out_shape.push_back(m);
  out_shape.push_back(n);
  std::vector<T> out(static_cast<std::size_t>(shape_numel(out_shape)));
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  if (shared_b) {
    kernels::gemm_nn(batches * m, n, k, pa, pb, out.data(), false);
  } else {
    for (std::int64_t i = 0; i < batches; ++i) {
      kernels::gemm_nn(m, n, k, pa + i * m * k, pb + i * k * n,
                       out.data() + i * m * n, false);
    }
  }
  return make_result<T>(
      out_shape, std::move(out), {a, b}, "matmul",
      [m, n, k, batches, shared_b](Node<T>& self) {
        auto& na = *self.inputs[0];
        auto& nb = *self.inputs[1];
        const T* g = self.grad.data();
        if (shared_b) {
          if (na.requires_grad) {
            kernels::gemm_nt(batches * m, k, n, g, nb.data.data(),
                             na.ensure_grad().data(), true);
          }
          if (nb.requires_grad) {
            kernels::gemm_tn(k, n, batches * m, na.data.data(), g,
                             nb.ensure_grad().data(), true);
          }
          return;
        }
        for (std::int64_t i = 0; i < batches; ++i) {
          if (na.requires_grad) {
            kernels::gemm_nt(m, k, n, g + i * m * n, nb.data.data() + i * k * n,
                             na.ensure_grad().data() + i * m * k, true);
          }
          if (nb.requires_grad) {
            kernels::gemm_tn(k, n, m, na.data.data() + i * m * k, g + i * m * n,
                             nb.ensure_grad().data() + i * k * n, true);
          }
        }
      });
}

template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias) {
  if (weight.rank() != 2 || x.rank() < 1 || x.size(-1) != weight.size(0)) {
    throw ShapeError("linear: input " + shape_str(x.shape()) +
                     " incompatible with weight " + shape_str(weight.shape()));
  }
  const std::int64_t in = weight.size(0), outf = weight.size(1);
  if (bias.defined() && (bias.rank() != 1 || bias.size(0) != outf)) {
    throw ShapeError("linear: bias " + shape_str(bias.shape()) +
                     " does not match weight " + shape_str(weight.shape()));
  }
  const std::int64_t rows = in == 0 ? 0 : x.numel() / in;
  Shape out_shape = x.shape();
  out_shape.back() = outf;
  std::vector<T> out(static_cast<std::size_t>(shape_numel(out_shape)));
  kernels::gemm_nn(rows, outf, in, x.data().data(), weight.data().data(),
                   out.data(), false);
  if (bias.defined()) {
    const T* pb = bias.data().data();
    for (std::int64_t r = 0; r < rows; ++r) {
      T* row = out.data() + r * outf;
      for (std::int64_t j = 0; j < outf; ++j) row[j] += pb[j];
    }
  }
  std::vector<BasicTensor<T>> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_result<T>(
      out_shape, std::move(out), inputs, "linear",
      [rows, in, outf](Node<T>& self) {
        auto& nx = *self.inputs[0];
        auto& nw = *self.inputs[1];
        const T* g = self.grad.data();
        if (nx.requires_grad) {
          kernels::gemm_nt(rows, in, outf, g, nw.data.data(),
                           nx.ensure_grad().data(), true);
        }
        if (nw.requires_grad) {
          kernels::gemm_tn(in, outf, rows, nx.data.data(), g,
                           nw.ensure_grad().data(), true);
        }
        if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) {
          T* gb = self.inputs[2]->ensure_grad().data();
          for (std::int64_t r = 0; r < rows; ++r) {
            for (std::int64_t j = 0; j < outf; ++j) gb[j] += g[r * outf + j];
          }
        }
      });
}

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape) {
  std::int64_t known = 1;
  int infer = -1;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == -1) {
      if (infer >= 0) throw ShapeError("reshape: more than one -1 extent");
      infer = static_cast<int>(i);
    } else {
      known *= shape[i];
    }
  }
  if (infer >= 0) {
    if (known == 0 || x.numel() % known != 0) {
      throw ShapeError("reshape: cannot infer extent for " + shape_str(shape) +
                       " from " + shape_str(x.shape()));
    }
    shape[infer] = x.numel() / known;
  }
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: " + shape_str(x.shape()) + " to " +
                     shape_str(shape) + " changes element count");
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  return make_result<T>(std::move(shape), std::move(out), {x}, "reshape",
                        [](Node<T>& self) {
                          auto& gx = self.inputs[0]->ensure_grad();
                          for (std::size_t i = 0; i < gx.size(); ++i) {
                            gx[i] += self.grad[i];
                          }
                        });
}

template <typename T>
BasicTensor<T> permute(const BasicTensor<T>& x, const std::vector<int>& axes) {
  const int r = x.rank();
  if (static_cast<int>(axes.size()) != r) {
    throw ShapeError("permute: axis list length does not match rank of " +
                     shape_str(x.shape()));
  }
  std::vector<bool> used(r, false);
  for (int a : axes) {
    if (a < 0 || a >= r || used[a]) throw ShapeError("permute: invalid axes");
    used[a] = true;
  }
  auto in_strides = contiguous_strides(x.shape());
  Broadcast bc;  // reuse the strided loop: "a" walks the input
  bc.out.resize(r);
  bc.stride_a.resize(r);
  bc.stride_b.assign(r, 0);
  for (int i = 0; i < r; ++i) {
    bc.out[i] = x.shape()[axes[i]];
    bc.stride_a[i] = in_strides[axes[i]];
  }
  std::vector<T> out(static_cast<std::size_t>(x.numel()));
  const T* px = x.data().data();
  broadcast_loop(bc, [&](std::int64_t o, std::int64_t ia, std::int64_t,
                         std::int64_t n, std::int64_t sa, std::int64_t) {
    for (std::int64_t j = 0; j < n; ++j) out[o + j] = px[ia + j * sa];
  });
  return make_result<T>(bc.out, std::move(out), {x}, "permute",
                        [bc](Node<T>& self) {
                          T* gx = self.inputs[0]->ensure_grad().data();
                          const T* g = self.grad.data();
                          broadcast_loop(bc, [&](std::int64_t o, std::int64_t ia,
                                                 std::int64_t, std::int64_t n,
                                                 std::int64_t sa, std::int64_t) {
                            for (std::int64_t j = 0; j < n; ++j) gx[ia + j * sa] += g[o + j];
                          });
                        });
}

template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& x) {
  const int r = x.rank();
  if (r < 2) throw ShapeError("transpose: rank must be >= 2");
  std::vector<int> axes(r);
  for (int i = 0; i < r; ++i) axes[i] = i;
  std::swap(axes[r - 1], axes[r - 2]);
  return permute(x, axes);
}

template <typename T>
BasicTensor<T> slice(const BasicTensor<T>& x, int axis, std::int64_t start,
                     std::int64_t length) {
  axis = normalize_axis(axis, x.rank(), "slice");
  const auto sp = split_at(x.shape(), axis);
  if (start < 0 || length < 0 || start + length > sp.len) {
    throw ShapeError("slice: range [" + std::to_string(start) + ", " +
                     std::to_string(start + length) + ") out of bounds for " +
                     shape_str(x.shape()));
  }
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  std::vector<T> out(static_cast<std::size_t>(shape_numel(out_shape)));
  const T* px = x.data().data();
  for (std::int64_t o = 0; o < sp.outer; ++o) {
    std::copy_n(px + (o * sp.len + start) * sp.inner, length * sp.inner,
                out.data() + o * length * sp.inner);
  }
  return make_result<T>(out_shape, std::move(out), {x}, "slice",
                        [sp, start, length](Node<T>& self) {
                          T* gx = self.inputs[0]->ensure_grad().data();
                          const T* g = self.grad.data();
                          const std::int64_t run = length * sp.inner;
                          for (std::int64_t o = 0; o < sp.outer; ++o) {
                            T* dst = gx + (o * sp.len + start) * sp.inner;
                            const T* src = g + o * run;
                            for (std::int64_t j = 0; j < run; ++j) dst[j] += src[j];
                          }
                        });
}

template <typename T>
BasicTensor<T> concat(const std::vector<BasicTensor<T>>& xs, int axis) {
  if (xs.empty()) throw ShapeError("concat: no inputs");
  axis = normalize_axis(axis, xs[0].rank(), "concat");
  Shape out_shape = xs[0].shape();
  std::int64_t total = 0;
  for (const auto& x : xs) {
    bool ok = x.rank() == xs[0].rank();
    for (int d = 0; ok && d < x.rank(); ++d) {
      if (d != axis && x.shape()[d] != out_shape[d]) ok = false;
    }
    if (!ok) {
      throw ShapeError("concat: " + shape_str(x.shape()) +
                       " incompatible with " + shape_str(xs[0].shape()));
    }
    total += x.shape()[axis];
  }
  out_shape[axis] = total;
  const auto sp = split_at(out_shape, axis);
  std::vector<T> out(static_cast<std::size_t>(shape_numel(out_shape)));
  std::vector<std::int64_t> offsets;
  std::int64_t off = 0;
  for (const auto& x : xs) {
    const std::int64_t len = x.shape()[axis];
    offsets.push_back(off);
    const T* px = x.data().data();
    for (std::int64_t o = 0; o < sp.outer; ++o) {
      std::copy_n(px + o * len * sp.inner, len * sp.inner,
                  out.data() + (o * total + off) * sp.inner);
    }
    off += len;
  }
  return make_result<T>(
      out_shape, std::move(out), xs, "concat",
      [sp, total, offsets, axis](Node<T>& self) {
        const T* g = self.grad.data();
        for (std::size_t i = 0; i < self.inputs.size(); ++i) {
          auto& in = *self.inputs[i];
          if (!in.requires_grad) continue;
          const std::int64_t len = in.shape[axis];
          T* gx = in.ensure_grad().data();
          for (std::int64_t o = 0; o < sp.outer; ++o) {
            const T* src = g + (o * total + offsets[i]) * sp.inner;
            T* dst = gx + o * len * sp.inner;
            for (std::int64_t j = 0; j < len * sp.inner; ++j) dst[j] += src[j];
          }
        }
      });
}

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& x, int axis) {
  axis = normalize_axis(axis, x.rank(), "softmax");
  check_finite(x.data(), "softmax");
  const auto sp = split_at(x.shape(), axis);
  std::vector<T> out(static_cast<std::size_t>(x.numel()));
  const T* px = x.data().data();
  for (std::int64_t o = 0; o < sp.outer; ++o) {
    for (std::int64_t in = 0; in < sp.inner; ++in) {
      const std::int64_t base = o * sp.len * sp.inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::int64_t j = 0; j < sp.len; ++j) mx = std::max(mx, px[base + j * sp.inner]);
      T total = 0;
      for (std::int64_t j = 0; j < sp.len; ++j) {
        const T e = std::exp(px[base + j * sp.inner] - mx);
        out[base + j * sp.inner] = e;
        total += e;
      }
      const T inv = T(1) / total;
      for (std::int64_t j = 0; j < sp.len; ++j) out[base + j * sp.inner] *= inv;
    }
  }
  return make_result<T>(x.shape(), std::move(out), {x}, "softmax",
                        [sp](Node<T>& self) {
                          T* gx = self.inputs[0]->ensure_grad().data();
                          const T* g = self.grad.data();
                          const T* y = self.data.data();
                          for (std::int64_t o = 0; o < sp.outer; ++o) {
                            for (std::int64_t in = 0; in < sp.inner; ++in) {
                              const std::int64_t base = o * sp.len * sp.inner + in;
                              T dot = 0;
                              for (std::int64_t j = 0; j < sp.len; ++j) {
                                const auto idx = base + j * sp.inner;
                                dot += g[idx] * y[idx];
                              }
                              for (std::int64_t j = 0; j < sp.len; ++j) {
                                const auto idx = base + j * sp.inner;
                                gx[idx] += y[idx] * (g[idx] - dot);
                              }
                            }
                          }
                        });
}

template <typename T>
BasicTensor<T> rms_norm(const BasicTensor<T>& x, const BasicTensor<T>& gain,
                        T eps) {
  const std::int64_t d = x.size(-1);
  if (gain.numel() != d) {
    throw ShapeError("rms_norm: gain " + shape_str(gain.shape()) +
                     " does not match last axis of " + shape_str(x.shape()));
  }
  const std::int64_t rows = d == 0 ? 0 : x.numel() / d;
  std::vector<T> out(static_cast<std::size_t>(x.numel()));
  std::vector<T> inv_rms(static_cast<std::size_t>(rows));
  const T* px = x.data().data();
  const T* pg = gain.data().data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* row = px + r * d;
    T ss = 0;
    for (std::int64_t j = 0; j < d; ++j) ss += row[j] * row[j];
    const T inv = T(1) / std::sqrt(ss / static_cast<T>(d) + eps);
    inv_rms[r] = inv;
    for (std::int64_t j = 0; j < d; ++j) out[r * d + j] = pg[j] * row[j] * inv;
  }
  return make_result<T>(
      x.shape(), std::move(out), {x, gain}, "rms_norm",
      [d, rows, inv_rms = std::move(inv_rms)](Node<T>& self) {
        auto& nx = *self.inputs[0];
        auto& ng = *self.inputs[1];
        const T* g = self.grad.data();
        const T* px = nx.data.data();
        const T* pg = ng.data.data();
        T* gx = nx.requires_grad ? nx.ensure_grad().data() : nullptr;
        T* gg = ng.requires_grad ? ng.ensure_grad().data() : nullptr;
        for (std::int64_t r = 0; r < rows; ++r) {
          const T inv = inv_rms[r];
          const T* row = px + r * d;
          const T* grow = g + r * d;
          if (gg) {
            for (std::int64_t j = 0; j < d; ++j) gg[j] += grow[j] * row[j] * inv;
          }
          if (gx) {
            T dot = 0;
            for (std::int64_t j = 0; j < d; ++j) dot += grow[j] * pg[j] * row[j];
            const T c = dot * inv * inv * inv / static_cast<T>(d);
            for (std::int64_t j = 0; j < d; ++j) {
              gx[r * d + j] += grow[j] * pg[j] * inv - row[j] * c;
            }
          }
        }
      });
}

template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gain,
                          const BasicTensor<T>& bias, T eps) {
  const std::int64_t d = x.size(-1);
  if ((gain.defined() && gain.numel() != d) ||
      (bias.defined() && bias.numel() != d)) {
    throw ShapeError("layer_norm: affine parameters do not match last axis of " +
                     shape_str(x.shape()));
  }
  const std::int64_t rows = d == 0 ? 0 : x.numel() / d;
  std::vector<T> out(static_cast<std::size_t>(x.numel()));
  std::vector<T> xhat(out.size());
  std::vector<T> inv_std(static_cast<std::size_t>(rows));
  const T* px = x.data().data();
  const T* pg = gain.defined() ? gain.data().data() : nullptr;
  const T* pb = bias.defined() ? bias.data().data() : nullptr;
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* row = px + r * d;
    T mu = 0;
    for (std::int64_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<T>(d);
    T var = 0;
    for (std::int64_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<T>(d);
    const T inv = T(1) / std::sqrt(var + eps);
    inv_std[r] = inv;
    for (std::int64_t j = 0; j < d; ++j) {
      const T h = (row[j] - mu) * inv;
      xhat[r * d + j] = h;
      out[r * d + j] = (pg ? pg[j] * h : h) + (pb ? pb[j] : T(0));
    }
  }
  std::vector<BasicTensor<T>> inputs{x};
  const bool has_gain = gain.defined(), has_bias = bias.defined();
  if (has_gain) inputs.push_back(gain);
  if (has_bias) inputs.push_back(bias);
  return make_result<T>(
      x.shape(), std::move(out), inputs, "layer_norm",
      [d, rows, has_gain, has_bias, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](Node<T>& self) {
        auto& nx = *self.inputs[0];
        Node<T>* ng = has_gain ? self.inputs[1].get() : nullptr;
        Node<T>* nb = has_bias ? self.inputs[has_gain ? 2 : 1].get() : nullptr;
        const T* g = self.grad.data();
        const T* pg = ng ? ng->data.data() : nullptr;
        T* gg = (ng && ng->requires_grad) ? ng->ensure_grad().data() : nullptr;
        T* gb = (nb && nb->requires_grad) ? nb->ensure_grad().data() : nullptr;
        T* gx = nx.requires_grad ? nx.ensure_grad().data() : nullptr;
        std::vector<T> dh(static_cast<std::size_t>(d));
        for (std::int64_t r = 0; r < rows; ++r) {
          const T* grow = g + r * d;
          const T* hrow = xhat.data() + r * d;
          if (gg) for (std::int64_t j = 0; j < d; ++j) gg[j] += grow[j] * hrow[j];
          if (gb) for (std::int64_t j = 0; j < d; ++j) gb[j] += grow[j];
          if (!gx) continue;
          T mean_dh = 0, mean_dhh = 0;
          for (std::int64_t j = 0; j < d; ++j) {
            dh[j] = pg ? grow[j] * pg[j] : grow[j];
            mean_dh += dh[j];
            mean_dhh += dh[j] * hrow[j];
          }
          mean_dh /= static_cast<T>(d);
          mean_dhh /= static_cast<T>(d);
          for (std::int64_t j = 0; j < d; ++j) {
            gx[r * d + j] += inv_std[r] * (dh[j] - mean_dh - hrow[j] * mean_dhh);
          }
        }
      });
}

template <typename T>
BasicTensor<T> gelu(const BasicTensor<T>& x) {
  const T c = static_cast<T>(std::sqrt(2.0 / std::numbers::pi));
  const T a = static_cast<T>(0.044715);
  std::vector<T> out(static_cast<std::size_t>(x.numel()));
  std::vector<T> th(out.size());
  const T* px = x.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = px[i];
    th[i] = std::tanh(c * (v + a * v * v * v));
    out[i] = T(0.5) * v * (T(1) + th[i]);
  }
  return make_result<T>(x.shape(), std::move(out), {x}, "gelu",
                        [c, a, th = std::move(th)](Node<T>& self) {
                          auto& nx = *self.inputs[0];
                          T* gx = nx.ensure_grad().data();
                          const T* px = nx.data.data();
                          for (std::size_t i = 0; i < self.grad.size(); ++i) {
                            const T v = px[i];
                            const T t = th[i];
                            const T dy = T(0.5) * (T(1) + t) +
                                         T(0.5) * v * (T(1) - t * t) * c *
                                             (T(1) + T(3) * a * v * v);
                            gx[i] += self.grad[i] * dy;
                          }
                        });
}

template <typename T>
BasicTensor<T> silu(const BasicTensor<T>& x) {
  std::vector<T> out(static_cast<std::size_t>(x.numel()));
  const T* px = x.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = px[i] / (T(1) + std::exp(-px[i]));
  }
  return make_result<T>(x.shape(), std::move(out), {x}, "silu",
                        [](Node<T>& self) {
                          auto& nx = *self.inputs[0];
                          T* gx = nx.ensure_grad().data();
                          const T* px = nx.data.data();
                          for (std::size_t i = 0; i < self.grad.size(); ++i) {
                            const T s = T(1) / (T(1) + std::exp(-px[i]));
                            gx[i] += self.grad[i] * s * (T(1) + px[i] * (T(1) - s));
                          }
                        });
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
  T total = 0;
  for (T v : x.data()) total += v;
  return make_result<T>({}, {total}, {x}, "sum", [](Node<T>& self) {
    auto& gx = self.inputs[0]->ensure_grad();
    const T g = self.grad[0];
    for (auto& v : gx) v += g;
  });
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& x) {
  if (x.numel() == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x, int axis, bool keepdim) {
  axis = normalize_axis(axis, x.rank(), "sum");
  const auto sp = split_at(x.shape(), axis);
  Shape out_shape = x.shape();
  if (keepdim) {
    out_shape[axis] = 1;
  } else {
    out_shape.erase(out_shape.begin() + axis);
  }
  std::vector<T> out(static_cast<std::size_t>(sp.outer * sp.inner), T(0));
  const T* px = x.data().data();
  for (std::int64_t o = 0; o < sp.outer; ++o) {
    for (std::int64_t j = 0; j < sp.len; ++j) {
      const T* src = px + (o * sp.len + j) * sp.inner;
      T* dst = out.data() + o * sp.inner;
      for (std::int64_t in = 0; in < sp.inner; ++in) dst[in] += src[in];
    }
  }
  return make_result<T>(out_shape, std::move(out), {x}, "sum_axis",
                        [sp](Node<T>& self) {
                          T* gx = self.inputs[0]->ensure_grad().data();
                          const T* g = self.grad.data();
                          for (std::int64_t o = 0; o < sp.outer; ++o) {
                            for (std::int64_t j = 0; j < sp.len; ++j) {
                              T* dst = gx + (o * sp.len + j) * sp.inner;
                              const T* src = g + o * sp.inner;
                              for (std::int64_t in = 0; in < sp.inner; ++in) dst[in] += src[in];
                            }
                          }
                        });
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& x, int axis, bool keepdim) {
  const std::int64_t len = x.size(axis);
  if (len == 0) throw ShapeError("mean: empty reduction axis");
  return scale(sum(x, axis, keepdim), T(1) / static_cast<T>(len));
}

template <typename T>
BasicTensor<T> embedding(const BasicTensor<T>& table,
                         std::span<const std::int64_t> ids) {
  if (table.rank() != 2) throw ShapeError("embedding: table must be 2-D");
  const std::int64_t rows = table.size(0), d = table.size(1);
  std::vector<T> out(ids.size() * static_cast<std::size_t>(d));
  const T* pt = table.data().data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= rows) {
      throw std::out_of_range("embedding: id " + std::to_string(ids[i]) +
                              " outside table of " + std::to_string(rows) +
                              " rows");
    }
    std::copy_n(pt + ids[i] * d, d, out.data() + i * d);
  }
  std::vector<std::int64_t> saved(ids.begin(), ids.end());
  return make_result<T>(
      {static_cast<std::int64_t>(ids.size()), d}, std::move(out), {table},
      "embedding", [saved = std::move(saved), d](Node<T>& self) {
        T* gt = self.inputs[0]->ensure_grad().data();
        const T* g = self.grad.data();
        for (std::size_t i = 0; i < saved.size(); ++i) {
          T* dst = gt + saved[i] * d;
          for (std::int64_t j = 0; j < d; ++j) dst[j] += g[i * d + j];
        }
      });
}

template <typename T>
BasicTensor<T> cross_entropy(const BasicTensor<T>& logits,
                             std::span<const std::int64_t> targets,
                             std::span<const T> weights) {
  if (logits.rank() != 2) {
    throw ShapeError("cross_entropy: logits must be [N, K], got " +
                     shape_str(logits.shape()));
  }
  const std::int64_t n = logits.size(0), k = logits.size(1);
  if (static_cast<std::int64_t>(targets.size()) != n ||
      static_cast<std::int64_t>(weights.size()) != n) {
    throw ShapeError("cross_entropy: targets/weights length must equal N");
  }
  double weight_sum = 0, loss = 0;
  std::vector<T> probs(static_cast<std::size_t>(n * k), T(0));
  const T* px = logits.data().data();
  for (std::int64_t i = 0; i < n; ++i) {
    if (!(weights[i] > T(0))) continue;
    if (targets[i] < 0 || targets[i] >= k) {
      throw std::out_of_range("cross_entropy: target " +
                              std::to_string(targets[i]) + " outside [0, " +
                              std::to_string(k) + ")");
    }
    const T* row = px + i * k;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::int64_t j = 0; j < k; ++j) mx = std::max(mx, row[j]);
    T total = 0;
    for (std::int64_t j = 0; j < k; ++j) {
      const T e = std::exp(row[j] - mx);
      probs[i * k + j] = e;
      total += e;
    }
    for (std::int64_t j = 0; j < k; ++j) probs[i * k + j] /= total;
    const double lse = static_cast<double>(mx) + std::log(static_cast<double>(total));
    loss += static_cast<double>(weights[i]) * (lse - static_cast<double>(row[targets[i]]));
    weight_sum += static_cast<double>(weights[i]);
  }
  if (weight_sum <= 0) {
    throw std::invalid_argument("cross_entropy: no rows with positive weight");
  }
  std::vector<std::int64_t> saved_t(targets.begin(), targets.end());
  std::vector<T> saved_w(weights.begin(), weights.end());
  return make_result<T>(
      {}, {static_cast<T>(loss / weight_sum)}, {logits}, "cross_entropy",
      [n, k, weight_sum, probs = std::move(probs), saved_t = std::move(saved_t),
       saved_w = std::move(saved_w)](Node<T>& self) {
        T* gx = self.inputs[0]->ensure_grad().data();
        const T g = self.grad[0];
        for (std::int64_t i = 0; i < n; ++i) {
          if (!(saved_w[i] > T(0))) continue;
          const T c = g * static_cast<T>(saved_w[i] / weight_sum);
          for (std::int64_t j = 0; j < k; ++j) gx[i * k + j] += c * probs[i * k + j];
          gx[i * k + saved_t[i]] -= c;
        }
      });
}

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias, int stride, int pad) {
  if (x.rank() != 4 || weight.rank() != 4 || weight.size(1) != x.size(1) ||
      weight.size(2) != weight.size(3)) {
    throw ShapeError("conv2d: input " + shape_str(x.shape()) +
                     " incompatible with kernel " + shape_str(weight.shape()));
  }
  if (stride < 1 || pad < 0) throw ShapeError("conv2d: invalid stride/pad");
  const std::int64_t b = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
  const std::int64_t o = weight.size(0);
  const int k = static_cast<int>(weight.size(2));
  const std::int64_t span_h = h + 2 * pad - k, span_w = w + 2 * pad - k;
  if (span_h < 0 || span_w < 0 || span_h % stride != 0 || span_w % stride != 0) {
    throw ShapeError("conv2d: non-integral output extent for input " +
                     shape_str(x.shape()) + ", k=" + std::to_string(k) +
                     ", stride=" + std::to_string(stride) +
                     ", pad=" + std::to_string(pad));
  }
  if (bias.defined() && bias.numel() != o) {
    throw ShapeError("conv2d: bias does not match output channels");
  }
  const std::int64_t oh = span_h / stride + 1, ow = span_w / stride + 1;
  const std::int64_t ckk = c * k * k, hw = oh * ow;
  std::vector<T> out(static_cast<std::size_t>(b * o * hw));
  std::vector<T> cols(static_cast<std::size_t>(ckk * hw));
  for (std::int64_t i = 0; i < b; ++i) {
    im2col(x.data().data() + i * c * h * w, c, h, w, k, stride, pad, oh, ow,
           cols.data());
    kernels::gemm_nn(o, hw, ckk, weight.data().data(), cols.data(),
                     out.data() + i * o * hw, false);
    if (bias.defined()) {
      for (std::int64_t oc = 0; oc < o; ++oc) {
        T* dst = out.data() + (i * o + oc) * hw;
        for (std::int64_t j = 0; j < hw; ++j) dst[j] += bias.data()[oc];
      }
    }
  }
  std::vector<BasicTensor<T>> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_result<T>(
      {b, o, oh, ow}, std::move(out), inputs, "conv2d",
      [=](Node<T>& self) {
        auto& nx = *self.inputs[0];
        auto& nw = *self.inputs[1];
        const T* g = self.grad.data();
        std::vector<T> cols(static_cast<std::size_t>(ckk * hw));
        for (std::int64_t i = 0; i < b; ++i) {
          const T* gi = g + i * o * hw;
          if (nw.requires_grad) {
            im2col(nx.data.data() + i * c * h * w, c, h, w, k, stride, pad, oh,
                   ow, cols.data());
            kernels::gemm_nt(o, ckk, hw, gi, cols.data(),
                             nw.ensure_grad().data(), true);
          }
          if (nx.requires_grad) {
            kernels::gemm_tn(ckk, hw, o, nw.data.data(), gi, cols.data(), false);
            col2im(cols.data(), c, h, w, k, stride, pad, oh, ow,
                   nx.ensure_grad().data() + i * c * h * w);
          }
        }
        if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) {
          T* gb = self.inputs[2]->ensure_grad().data();
          for (std::int64_t i = 0; i < b; ++i) {
            for (std::int64_t oc = 0; oc < o; ++oc) {
              const T* src = g + (i * o + oc) * hw;
              for (std::int64_t j = 0; j < hw; ++j) gb[oc] += src[j];
            }
          }
        }
      });
}

template <typename T>
BasicTensor<T> conv_transpose2d(const BasicTensor<T>& x,
                                const BasicTensor<T>& weight,
                                const BasicTensor<T>& bias, int stride,
                                int pad) {
  if (x.rank() != 4 || weight.rank() != 4 || weight.size(0) != x.size(1) ||
      weight.size(2) != weight.size(3)) {
    throw ShapeError("conv_transpose2d: input " + shape_str(x.shape()) +
                     " incompatible with kernel " + shape_str(weight.shape()));
  }
  if (stride < 1 || pad < 0) {
    throw ShapeError("conv_transpose2d: invalid stride/pad");
  }
  const std::int64_t b = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
  const std::int64_t o = weight.size(1);
  const int k = static_cast<int>(weight.size(2));
  const std::int64_t oh = (h - 1) * stride - 2 * pad + k;
  const std::int64_t ow = (w - 1) * stride - 2 * pad + k;
  if (oh <= 0 || ow <= 0) {
    throw ShapeError("conv_transpose2d: empty output for input " +
                     shape_str(x.shape()));
  }
  if (bias.defined() && bias.numel() != o) {
    throw ShapeError("conv_transpose2d: bias does not match output channels");
  }
  const std::int64_t okk = o * k * k, hw = h * w, ohw = oh * ow;
  std::vector<T> out(static_cast<std::size_t>(b * o * ohw), T(0));
  std::vector<T> cols(static_cast<std::size_t>(okk * hw));
  for (std::int64_t i = 0; i < b; ++i) {
    kernels::gemm_tn(okk, hw, c, weight.data().data(),
                     x.data().data() + i * c * hw, cols.data(), false);
    T* dst = out.data() + i * o * ohw;
    col2im(cols.data(), o, oh, ow, k, stride, pad, h, w, dst);
    if (bias.defined()) {
      for (std::int64_t oc = 0; oc < o; ++oc) {
        for (std::int64_t j = 0; j < ohw; ++j) dst[oc * ohw + j] += bias.data()[oc];
      }
    }
  }
  std::vector<BasicTensor<T>> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_result<T>(
      {b, o, oh, ow}, std::move(out), inputs, "conv_transpose2d",
      [=](Node<T>& self) {
        auto& nx = *self.inputs[0];
        auto& nw = *self.inputs[1];
        const T* g = self.grad.data();
        std::vector<T> gcols(static_cast<std::size_t>(okk * hw));
        for (std::int64_t i = 0; i < b; ++i) {
          im2col(g + i * o * ohw, o, oh, ow, k, stride, pad, h, w, gcols.data());
          if (nx.requires_grad) {
            kernels::gemm_nn(c, hw, okk, nw.data.data(), gcols.data(),
                             nx.ensure_grad().data() + i * c * hw, true);
          }
          if (nw.requires_grad) {
            kernels::gemm_nt(c, okk, hw, nx.data.data() + i * c * hw,
                             gcols.data(), nw.ensure_grad().data(), true);
          }
        }
        if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) {
          T* gb = self.inputs[2]->ensure_grad().data();
          for (std::int64_t i = 0; i < b; ++i) {
            for (std::int64_t oc = 0; oc < o; ++oc) {
              const T* src = g + (i * o + oc) * ohw;
              for (std::int64_t j = 0; j < ohw; ++j) gb[oc] += src[j];
            }
          }
        }
      });
}

template <typename T>
BasicTensor<T> mse(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  auto d = sub(a, b);
  return mean(mul(d, d));
}

#define MIM_INSTANTIATE_OPS(T)                                                 \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);   \
  template BasicTensor<T> sub(const BasicTensor<T>&, const BasicTensor<T>&);   \
  template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);   \
  template BasicTensor<T> scale(const BasicTensor<T>&, T);                     \
  template BasicTensor<T> add_scalar(const BasicTensor<T>&, T);                \
  template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&); \
  template BasicTensor<T> linear(const BasicTensor<T>&, const BasicTensor<T>&, \
                                 const BasicTensor<T>&);                       \
  template BasicTensor<T> reshape(const BasicTensor<T>&, Shape);               \
  template BasicTensor<T> permute(const BasicTensor<T>&,                       \
                                  const std::vector<int>&);                    \
  template BasicTensor<T> transpose(const BasicTensor<T>&);                    \
  template BasicTensor<T> slice(const BasicTensor<T>&, int, std::int64_t,      \
                                std::int64_t);                                 \
  template BasicTensor<T> concat(const std::vector<BasicTensor<T>>&, int);     \
  template BasicTensor<T> softmax(const BasicTensor<T>&, int);                 \
  template BasicTensor<T> rms_norm(const BasicTensor<T>&,                      \
                                   const BasicTensor<T>&, T);                  \
  template BasicTensor<T> layer_norm(const BasicTensor<T>&,                    \
                                     const BasicTensor<T>&,                    \
                                     const BasicTensor<T>&, T);                \
  template BasicTensor<T> gelu(const BasicTensor<T>&);                         \
  template BasicTensor<T> silu(const BasicTensor<T>&);                         \
  template BasicTensor<T> sum(const BasicTensor<T>&);                          \
  template BasicTensor<T> mean(const BasicTensor<T>&);                         \
  template BasicTensor<T> sum(const BasicTensor<T>&, int, bool);               \
  template BasicTensor<T> mean(const BasicTensor<T>&, int, bool);              \
  template BasicTensor<T> embedding(const BasicTensor<T>&,                     \
                                    std::span<const std::int64_t>);            \
  template BasicTensor<T> cross_entropy(const BasicTensor<T>&,                 \
                                        std::span<const std::int64_t>,         \
                                        std::span<const T>);                   \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&, \
                                 const BasicTensor<T>&, int, int);             \
  template BasicTensor<T> conv_transpose2d(                                    \
      const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,     \
      int, int);                                                               \
  template BasicTensor<T> mse(const BasicTensor<T>&, const BasicTensor<T>&);

MIM_INSTANTIATE_OPS(float)
MIM_INSTANTIATE_OPS(double)

#undef MIM_INSTANTIATE_OPS

}  // namespace mim
