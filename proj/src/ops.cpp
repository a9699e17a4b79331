// Copyright 2026 The vitlab Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>

#include "vitlab/tensor.hpp"

namespace vitlab {
namespace {

// Right-aligned numpy broadcasting. Strides are 0 along stretched axes.
struct Broadcast {
  Shape out;
  std::vector<std::size_t> stride_a;
  std::vector<std::size_t> stride_b;
};

std::vector<std::size_t> contiguous_strides(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

Broadcast make_broadcast(const Shape& a, const Shape& b, std::string_view op) {
  const std::size_t r = std::max(a.size(), b.size());
  Broadcast bc;
  bc.out.assign(r, 1);
  bc.stride_a.assign(r, 0);
  bc.stride_b.assign(r, 0);
  const auto sa = contiguous_strides(a);
  const auto sb = contiguous_strides(b);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t ia = i + a.size() >= r ? i + a.size() - r : SIZE_MAX;
    const std::size_t ib = i + b.size() >= r ? i + b.size() - r : SIZE_MAX;
    const std::size_t da = ia == SIZE_MAX ? 1 : a[ia];
    const std::size_t db = ib == SIZE_MAX ? 1 : b[ib];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("cannot broadcast " + shape_str(a) + " with " + shape_str(b) + " in '" +
                       std::string(op) + "'");
    }
    bc.out[i] = std::max(da, db);
    if (da == 0 || db == 0) bc.out[i] = 0;
    if (ia != SIZE_MAX && da != 1) bc.stride_a[i] = sa[ia];
    if (ib != SIZE_MAX && db != 1) bc.stride_b[i] = sb[ib];
  }
  return bc;
}

// Calls f(out_index, a_index, b_index) for every output element in row-major order.
template <typename F>
void for_each_broadcast(const Broadcast& bc, F&& f) {
  const std::size_t r = bc.out.size();
  const std::size_t total = numel(bc.out);
  if (total == 0) return;
  if (r == 0) {
    f(std::size_t{0}, std::size_t{0}, std::size_t{0});
    return;
  }
  const std::size_t inner = bc.out[r - 1];
  const std::size_t sa = bc.stride_a[r - 1];
  const std::size_t sb = bc.stride_b[r - 1];
  std::vector<std::size_t> idx(r, 0);
  std::size_t off_a = 0;
  std::size_t off_b = 0;
  for (std::size_t o = 0; o < total; o += inner) {
    for (std::size_t j = 0; j < inner; ++j) f(o + j, off_a + j * sa, off_b + j * sb);
    for (std::size_t ax = r - 1; ax-- > 0;) {
      off_a += bc.stride_a[ax];
      off_b += bc.stride_b[ax];
      if (++idx[ax] < bc.out[ax]) break;
      off_a -= bc.stride_a[ax] * bc.out[ax];
      off_b -= bc.stride_b[ax] * bc.out[ax];
      idx[ax] = 0;
    }
  }
}

template <typename T, typename Fwd, typename Bwd>
Var<T> binary(Var<T> a, Var<T> b, std::string_view op, Fwd fwd, Bwd bwd) {
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  Broadcast bc = make_broadcast(av.shape(), bv.shape(), op);
  std::vector<T> out(numel(bc.out));
  const auto pa = av.data();
  const auto pb = bv.data();
  for_each_broadcast(bc, [&](std::size_t o, std::size_t ia, std::size_t ib) {
    out[o] = fwd(pa[ia], pb[ib]);
  });
  Shape out_shape = bc.out;
  const std::size_t ida = a.id();
  const std::size_t idb = b.id();
  return a.graph().record(
      op, {a, b}, Tensor<T>(std::move(out_shape), std::move(out)),
      [bc = std::move(bc), ida, idb, bwd](Graph<T>& g, std::size_t, std::span<const T> go) {
        const auto& x = g.node(ida).value.data();
        const auto& y = g.node(idb).value.data();
        std::span<T> ga = g.needs_grad(ida) ? g.accumulate_grad(ida) : std::span<T>{};
        std::span<T> gb = g.needs_grad(idb) ? g.accumulate_grad(idb) : std::span<T>{};
        for_each_broadcast(bc, [&](std::size_t o, std::size_t ia, std::size_t ib) {
          T da = 0;
          T db = 0;
          bwd(x[ia], y[ib], go[o], da, db);
          if (!ga.empty()) ga[ia] += da;
          if (!gb.empty()) gb[ib] += db;
        });
      });
}

// df(x, y) is the derivative of y = f(x).
template <typename T, typename F, typename DF>
Var<T> unary(Var<T> a, std::string_view op, F f, DF df) {
  const auto x = a.value().data();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  const std::size_t ida = a.id();
  return a.graph().record(
      op, {a}, Tensor<T>(a.shape(), std::move(out)),
      [ida, df](Graph<T>& g, std::size_t self, std::span<const T> go) {
        const auto xv = g.node(ida).value.data();
        const auto yv = g.node(self).value.data();
        auto ga = g.accumulate_grad(ida);
        for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * df(xv[i], yv[i]);
      });
}

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t n = 1;
  std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.n = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

Shape reduced_shape(const Shape& s, std::size_t axis, bool keepdim) {
  Shape out = s;
  if (keepdim) {
    out[axis] = 1;
  } else {
    out.erase(out.begin() + static_cast<std::ptrdiff_t>(axis));
  }
  return out;
}

template <typename T>
std::vector<T> axis_sum(std::span<const T> x, const AxisSplit& sp) {
  std::vector<T> out(sp.outer * sp.inner, T(0));
  for (std::size_t o = 0; o < sp.outer; ++o) {
    T* dst = out.data() + o * sp.inner;
    for (std::size_t k = 0; k < sp.n; ++k) {
      const T* src = x.data() + (o * sp.n + k) * sp.inner;
      for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
    }
  }
  return out;
}

// C[r][j] += sum_q X(r, q) * Y[q][j] with X(r, q) = x[r * xr + q * xq] and Y
// row-major [red, n]. Rows are processed in blocks of MR whose X values are
// packed contiguously; columns in tiles of two 32-byte vectors. Every output
// element is still summed in increasing q with separate multiply and add, so
// the vector path and the scalar edge path round identically.
template <typename T>
void gemm_strided(const T* x, std::size_t xr, std::size_t xq, const T* y, T* c,
                  std::size_t rows, std::size_t red, std::size_t n) {
  using V [[gnu::vector_size(32)]] = T;
  constexpr std::size_t MR = 4;
  constexpr std::size_t NV = 2;
  constexpr std::size_t W = sizeof(V) / sizeof(T);
  constexpr std::size_t NR = NV * W;
  std::vector<T> panel(red * MR);
  for (std::size_t i0 = 0; i0 < rows; i0 += MR) {
    const std::size_t mr = std::min(MR, rows - i0);
    for (std::size_t q = 0; q < red; ++q) {
      for (std::size_t r = 0; r < MR; ++r) {
        panel[q * MR + r] = r < mr ? x[(i0 + r) * xr + q * xq] : T(0);
      }
    }
    const T* px = panel.data();
    std::size_t j0 = 0;
    if (mr == MR) {
      for (; j0 + NR <= n; j0 += NR) {
        V acc[MR][NV];
        for (std::size_t r = 0; r < MR; ++r) {
          for (std::size_t v = 0; v < NV; ++v) {
            std::memcpy(&acc[r][v], c + (i0 + r) * n + j0 + v * W, sizeof(V));
          }
        }
        for (std::size_t q = 0; q < red; ++q) {
          V yv[NV];
          for (std::size_t v = 0; v < NV; ++v) std::memcpy(&yv[v], y + q * n + j0 + v * W, sizeof(V));
          for (std::size_t r = 0; r < MR; ++r) {
            const T xv = px[q * MR + r];
            for (std::size_t v = 0; v < NV; ++v) acc[r][v] += xv * yv[v];
          }
        }
        for (std::size_t r = 0; r < MR; ++r) {
          for (std::size_t v = 0; v < NV; ++v) {
            std::memcpy(c + (i0 + r) * n + j0 + v * W, &acc[r][v], sizeof(V));
          }
        }
      }
    }
    if (j0 < n) {
      for (std::size_t r = 0; r < mr; ++r) {
        T* crow = c + (i0 + r) * n;
        for (std::size_t q = 0; q < red; ++q) {
          const T xv = px[q * MR + r];
          const T* yrow = y + q * n;
          for (std::size_t j = j0; j < n; ++j) crow[j] += xv * yrow[j];
        }
      }
    }
  }
}

// C[M,N] += A[M,K] * B[K,N]
template <typename T>
void gemm_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  gemm_strided(a, k, 1, b, c, m, k, n);
}

// C[K,N] += A[M,K]^T * G[M,N]
template <typename T>
void gemm_tn_acc(const T* a, const T* g, T* c, std::size_t m, std::size_t k, std::size_t n) {
  gemm_strided(a, 1, k, g, c, k, m, n);
}

template <typename T>
std::vector<T> transpose2d(const T* x, std::size_t rows, std::size_t cols) {
  std::vector<T> t(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) t[c * rows + r] = x[r * cols + c];
  }
  return t;
}

template <typename T>
void accumulate_all(Graph<T>& g, std::size_t id, std::span<const T> go) {
  auto ga = g.accumulate_grad(id);
  for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
}

}  // namespace

// ---- elementwise ----------------------------------------------------------------

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  return binary(a, b, "add", [](T x, T y) { return x + y; },
                [](T, T, T g, T& da, T& db) { da = g; db = g; });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  return binary(a, b, "sub", [](T x, T y) { return x - y; },
                [](T, T, T g, T& da, T& db) { da = g; db = -g; });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  return binary(a, b, "mul", [](T x, T y) { return x * y; },
                [](T x, T y, T g, T& da, T& db) { da = g * y; db = g * x; });
}

template <typename T>
Var<T> div(Var<T> a, Var<T> b) {
  const auto bv = b.value().data();
  if (std::any_of(bv.begin(), bv.end(), [](T v) { return v == T(0); })) {
    throw DomainError("division by zero in 'div'");
  }
  return binary(a, b, "div", [](T x, T y) { return x / y; },
                [](T x, T y, T g, T& da, T& db) {
                  da = g / y;
                  db = -g * x / (y * y);
                });
}

template <typename T>
Var<T> add_scalar(Var<T> a, T s) {
  return unary(a, "add_scalar", [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <typename T>
Var<T> scale(Var<T> a, T s) {
  return unary(a, "scale", [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <typename T>
Var<T> neg(Var<T> a) {
  return unary(a, "neg", [](T x) { return -x; }, [](T, T) { return T(-1); });
}

template <typename T>
Var<T> exp(Var<T> a) {
  return unary(a, "exp", [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Var<T> log(Var<T> a) {
  const auto x = a.value().data();
  if (std::any_of(x.begin(), x.end(), [](T v) { return !(v > T(0)); })) {
    throw DomainError("log of a non-positive value");
  }
  return unary(a, "log", [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
Var<T> sqrt(Var<T> a) {
  const auto x = a.value().data();
  if (std::any_of(x.begin(), x.end(), [](T v) { return v < T(0); })) {
    throw DomainError("sqrt of a negative value");
  }
  return unary(a, "sqrt", [](T v) { return std::sqrt(v); },
               [](T, T y) { return T(0.5) / y; });
}

template <typename T>
Var<T> square(Var<T> a) {
  return unary(a, "square", [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <typename T>
Var<T> gelu(Var<T> a) {
  constexpr T c = T(0.7978845608028654);  // sqrt(2 / pi)
  constexpr T k = T(0.044715);
  return unary(
      a, "gelu",
      [](T x) { return T(0.5) * x * (T(1) + std::tanh(c * (x + k * x * x * x))); },
      [](T x, T) {
        const T t = std::tanh(c * (x + k * x * x * x));
        return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * c * (T(1) + T(3) * k * x * x);
      });
}

template <typename T>
Var<T> sigmoid(Var<T> a) {
  return unary(
      a, "sigmoid",
      [](T x) {
        if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
        const T e = std::exp(x);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> softplus(Var<T> a) {
  return unary(
      a, "softplus",
      [](T x) { return std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x))); },
      [](T x, T) {
        if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
        const T e = std::exp(x);
        return e / (T(1) + e);
      });
}

// ---- reductions -----------------------------------------------------------------

template <typename T>
Var<T> sum(Var<T> a, std::ptrdiff_t axis, bool keepdim) {
  const std::size_t ax = normalize_axis(axis, a.shape().size());
  const AxisSplit sp = split_axis(a.shape(), ax);
  if (sp.n == 0) throw ShapeError("sum over an empty axis");
  const std::size_t ida = a.id();
  return a.graph().record(
      "sum", {a}, Tensor<T>(reduced_shape(a.shape(), ax, keepdim), axis_sum(a.value().data(), sp)),
      [ida, sp](Graph<T>& g, std::size_t, std::span<const T> go) {
        auto ga = g.accumulate_grad(ida);
        for (std::size_t o = 0; o < sp.outer; ++o) {
          for (std::size_t k = 0; k < sp.n; ++k) {
            T* dst = ga.data() + (o * sp.n + k) * sp.inner;
            const T* src = go.data() + o * sp.inner;
            for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
          }
        }
      });
}

template <typename T>
Var<T> mean(Var<T> a, std::ptrdiff_t axis, bool keepdim) {
  const std::size_t ax = normalize_axis(axis, a.shape().size());
  const AxisSplit sp = split_axis(a.shape(), ax);
  if (sp.n == 0) throw ShapeError("mean over an empty axis");
  std::vector<T> out = axis_sum(a.value().data(), sp);
  const T n = static_cast<T>(sp.n);
  for (T& v : out) v /= n;
  const std::size_t ida = a.id();
  return a.graph().record(
      "mean", {a}, Tensor<T>(reduced_shape(a.shape(), ax, keepdim), std::move(out)),
      [ida, sp, n](Graph<T>& g, std::size_t, std::span<const T> go) {
        auto ga = g.accumulate_grad(ida);
        for (std::size_t o = 0; o < sp.outer; ++o) {
          for (std::size_t k = 0; k < sp.n; ++k) {
            T* dst = ga.data() + (o * sp.n + k) * sp.inner;
            const T* src = go.data() + o * sp.inner;
            for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += src[i] / n;
          }
        }
      });
}

template <typename T>
Var<T> var(Var<T> a, std::ptrdiff_t axis, bool keepdim) {
  const std::size_t ax = normalize_axis(axis, a.shape().size());
  const AxisSplit sp = split_axis(a.shape(), ax);
  if (sp.n == 0) throw ShapeError("var over an empty axis");
  const auto x = a.value().data();
  const T n = static_cast<T>(sp.n);
  std::vector<T> mu = axis_sum(x, sp);
  for (T& v : mu) v /= n;
  std::vector<T> out(mu.size(), T(0));
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t k = 0; k < sp.n; ++k) {
      const T* src = x.data() + (o * sp.n + k) * sp.inner;
      for (std::size_t i = 0; i < sp.inner; ++i) {
        const T d = src[i] - mu[o * sp.inner + i];
        out[o * sp.inner + i] += d * d;
      }
    }
  }
  for (T& v : out) v /= n;
  const std::size_t ida = a.id();
  return a.graph().record(
      "var", {a}, Tensor<T>(reduced_shape(a.shape(), ax, keepdim), std::move(out)),
      [ida, sp, n, mu = std::move(mu)](Graph<T>& g, std::size_t, std::span<const T> go) {
        const auto xv = g.node(ida).value.data();
        auto ga = g.accumulate_grad(ida);
        for (std::size_t o = 0; o < sp.outer; ++o) {
          for (std::size_t k = 0; k < sp.n; ++k) {
            const std::size_t base = (o * sp.n + k) * sp.inner;
            for (std::size_t i = 0; i < sp.inner; ++i) {
              const std::size_t r = o * sp.inner + i;
              ga[base + i] += go[r] * T(2) * (xv[base + i] - mu[r]) / n;
            }
          }
        }
      });
}

template <typename T>
Var<T> max(Var<T> a, std::ptrdiff_t axis, bool keepdim) {
  const std::size_t ax = normalize_axis(axis, a.shape().size());
  const AxisSplit sp = split_axis(a.shape(), ax);
  if (sp.n == 0) throw ShapeError("max over an empty axis");
  const auto x = a.value().data();
  std::vector<T> out(sp.outer * sp.inner);
  std::vector<std::size_t> arg(out.size(), 0);
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      std::size_t best = 0;
      T bv = x[o * sp.n * sp.inner + i];
      for (std::size_t k = 1; k < sp.n; ++k) {
        const T v = x[(o * sp.n + k) * sp.inner + i];
        if (v > bv) {
          bv = v;
          best = k;
        }
      }
      out[o * sp.inner + i] = bv;
      arg[o * sp.inner + i] = (o * sp.n + best) * sp.inner + i;
    }
  }
  const std::size_t ida = a.id();
  return a.graph().record(
      "max", {a}, Tensor<T>(reduced_shape(a.shape(), ax, keepdim), std::move(out)),
      [ida, arg = std::move(arg)](Graph<T>& g, std::size_t, std::span<const T> go) {
        auto ga = g.accumulate_grad(ida);
        for (std::size_t r = 0; r < arg.size(); ++r) ga[arg[r]] += go[r];
      });
}

template <typename T>
Var<T> sum_all(Var<T> a) {
  const auto x = a.value().data();
  T s = 0;
  for (T v : x) s += v;
  const std::size_t ida = a.id();
  return a.graph().record("sum_all", {a}, Tensor<T>::scalar(s),
                          [ida](Graph<T>& g, std::size_t, std::span<const T> go) {
                            auto ga = g.accumulate_grad(ida);
                            for (T& v : ga) v += go[0];
                          });
}

// ---- matrix products -------------------------------------------------------------

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() < 2 || bs.size() != 2 || as.back() != bs[0]) {
    throw ShapeError("matmul shape mismatch: " + shape_str(as) + " x " + shape_str(bs));
  }
  const std::size_t k = bs[0];
  const std::size_t n = bs[1];
  const std::size_t m = k == 0 ? 0 : a.value().size() / k;
  std::vector<T> out(m * n, T(0));
  gemm_acc(a.value().data().data(), b.value().data().data(), out.data(), m, k, n);
  Shape out_shape = as;
  out_shape.back() = n;
  const std::size_t ida = a.id();
  const std::size_t idb = b.id();
  return a.graph().record(
      "matmul", {a, b}, Tensor<T>(std::move(out_shape), std::move(out)),
      [ida, idb, m, k, n](Graph<T>& g, std::size_t, std::span<const T> go) {
        const T* av = g.node(ida).value.data().data();
        const T* bv = g.node(idb).value.data().data();
        if (g.needs_grad(ida)) {
          const std::vector<T> bt = transpose2d(bv, k, n);
          gemm_acc(go.data(), bt.data(), g.accumulate_grad(ida).data(), m, n, k);
        }
        if (g.needs_grad(idb)) gemm_tn_acc(av, go.data(), g.accumulate_grad(idb).data(), m, k, n);
      });
}

template <typename T>
Var<T> bmm(Var<T> a, Var<T> b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() != 3 || bs.size() != 3 || as[0] != bs[0] || as[2] != bs[1]) {
    throw ShapeError("bmm shape mismatch: " + shape_str(as) + " x " + shape_str(bs));
  }
  const std::size_t groups = as[0];
  const std::size_t m = as[1];
  const std::size_t k = as[2];
  const std::size_t n = bs[2];
  std::vector<T> out(groups * m * n, T(0));
  const T* av = a.value().data().data();
  const T* bv = b.value().data().data();
  for (std::size_t gi = 0; gi < groups; ++gi) {
    gemm_acc(av + gi * m * k, bv + gi * k * n, out.data() + gi * m * n, m, k, n);
  }
  const std::size_t ida = a.id();
  const std::size_t idb = b.id();
  return a.graph().record(
      "bmm", {a, b}, Tensor<T>(Shape{groups, m, n}, std::move(out)),
      [ida, idb, groups, m, k, n](Graph<T>& g, std::size_t, std::span<const T> go) {
        const T* x = g.node(ida).value.data().data();
        const T* y = g.node(idb).value.data().data();
        T* ga = g.needs_grad(ida) ? g.accumulate_grad(ida).data() : nullptr;
        T* gb = g.needs_grad(idb) ? g.accumulate_grad(idb).data() : nullptr;
        for (std::size_t gi = 0; gi < groups; ++gi) {
          const T* gog = go.data() + gi * m * n;
          if (ga != nullptr) {
            const std::vector<T> yt = transpose2d(y + gi * k * n, k, n);
            gemm_acc(gog, yt.data(), ga + gi * m * k, m, n, k);
          }
          if (gb != nullptr) gemm_tn_acc(x + gi * m * k, gog, gb + gi * k * n, m, k, n);
        }
      });
}

// ---- data movement -----------------------------------------------------------------

template <typename T>
Var<T> reshape(Var<T> a, Shape shape) {
  const std::size_t ida = a.id();
  return a.graph().record("reshape", {a}, a.value().reshape(std::move(shape)),
                          [ida](Graph<T>& g, std::size_t, std::span<const T> go) {
                            accumulate_all(g, ida, go);
                          });
}

template <typename T>
Var<T> permute(Var<T> a, std::vector<std::size_t> axes) {
  Tensor<T> out = permute(a.value(), axes);
  std::vector<std::size_t> inv(axes.size());
  for (std::size_t i = 0; i < axes.size(); ++i) inv[axes[i]] = i;
  const std::size_t ida = a.id();
  return a.graph().record(
      "permute", {a}, std::move(out),
      [ida, inv = std::move(inv)](Graph<T>& g, std::size_t self, std::span<const T> go) {
        const Tensor<T> gt(g.node(self).value.shape(), std::vector<T>(go.begin(), go.end()));
        const Tensor<T> back = permute(gt, inv);
        accumulate_all(g, ida, back.data());
      });
}

template <typename T>
Var<T> transpose(Var<T> a, std::ptrdiff_t axis0, std::ptrdiff_t axis1) {
  const std::size_t r = a.shape().size();
  std::vector<std::size_t> axes(r);
  for (std::size_t i = 0; i < r; ++i) axes[i] = i;
  std::swap(axes[normalize_axis(axis0, r)], axes[normalize_axis(axis1, r)]);
  return permute(a, std::move(axes));
}

template <typename T>
Var<T> rearrange(Var<T> a, const RearrangePlan& plan) {
  if (a.shape() != plan.input_shape()) {
    throw ShapeError("rearrange '" + plan.pattern() + "' planned for " +
                     shape_str(plan.input_shape()) + ", got " + shape_str(a.shape()));
  }
  return reshape(permute(reshape(a, plan.split_shape()), plan.permutation()),
                 plan.output_shape());
}

template <typename T>
Var<T> rearrange(Var<T> a, std::string_view pattern,
                 const std::map<std::string, std::size_t>& sizes) {
  return rearrange(a, RearrangePlan(pattern, a.shape(), sizes));
}

template <typename T>
Var<T> broadcast_to(Var<T> a, Shape shape) {
  Broadcast bc = make_broadcast(a.shape(), shape, "broadcast_to");
  if (bc.out != shape) {
    throw ShapeError("cannot broadcast " + shape_str(a.shape()) + " to " + shape_str(shape));
  }
  std::vector<T> out(numel(shape));
  const auto x = a.value().data();
  for_each_broadcast(bc, [&](std::size_t o, std::size_t ia, std::size_t) { out[o] = x[ia]; });
  const std::size_t ida = a.id();
  return a.graph().record(
      "broadcast_to", {a}, Tensor<T>(std::move(shape), std::move(out)),
      [ida, bc = std::move(bc)](Graph<T>& g, std::size_t, std::span<const T> go) {
        auto ga = g.accumulate_grad(ida);
        for_each_broadcast(bc, [&](std::size_t o, std::size_t ia, std::size_t) { ga[ia] += go[o]; });
      });
}

// ---- softmax -------------------------------------------------------------------------

template <typename T>
Var<T> softmax(Var<T> a, std::ptrdiff_t axis) {
  const std::size_t ax = normalize_axis(axis, a.shape().size());
  const AxisSplit sp = split_axis(a.shape(), ax);
  const auto x = a.value().data();
  std::vector<T> out(x.size());
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      const std::size_t base = o * sp.n * sp.inner + i;
      T m = x[base];
      for (std::size_t k = 1; k < sp.n; ++k) m = std::max(m, x[base + k * sp.inner]);
      T s = 0;
      for (std::size_t k = 0; k < sp.n; ++k) {
        const T e = std::exp(x[base + k * sp.inner] - m);
        out[base + k * sp.inner] = e;
        s += e;
      }
      for (std::size_t k = 0; k < sp.n; ++k) out[base + k * sp.inner] /= s;
    }
  }
  const std::size_t ida = a.id();
  return a.graph().record(
      "softmax", {a}, Tensor<T>(a.shape(), std::move(out)),
      [ida, sp](Graph<T>& g, std::size_t self, std::span<const T> go) {
        const auto y = g.node(self).value.data();
        auto ga = g.accumulate_grad(ida);
        for (std::size_t o = 0; o < sp.outer; ++o) {
          for (std::size_t i = 0; i < sp.inner; ++i) {
            const std::size_t base = o * sp.n * sp.inner + i;
            T dot = 0;
            for (std::size_t k = 0; k < sp.n; ++k) {
              dot += go[base + k * sp.inner] * y[base + k * sp.inner];
            }
            for (std::size_t k = 0; k < sp.n; ++k) {
              const std::size_t j = base + k * sp.inner;
              ga[j] += y[j] * (go[j] - dot);
            }
          }
        }
      });
}

template <typename T>
Var<T> log_softmax(Var<T> a, std::ptrdiff_t axis) {
  const std::size_t ax = normalize_axis(axis, a.shape().size());
  const AxisSplit sp = split_axis(a.shape(), ax);
  const auto x = a.value().data();
  std::vector<T> out(x.size());
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      const std::size_t base = o * sp.n * sp.inner + i;
      T m = x[base];
      for (std::size_t k = 1; k < sp.n; ++k) m = std::max(m, x[base + k * sp.inner]);
      T s = 0;
      for (std::size_t k = 0; k < sp.n; ++k) s += std::exp(x[base + k * sp.inner] - m);
      const T lse = m + std::log(s);
      for (std::size_t k = 0; k < sp.n; ++k) {
        out[base + k * sp.inner] = x[base + k * sp.inner] - lse;
      }
    }
  }
  const std::size_t ida = a.id();
  return a.graph().record(
      "log_softmax", {a}, Tensor<T>(a.shape(), std::move(out)),
      [ida, sp](Graph<T>& g, std::size_t self, std::span<const T> go) {
        const auto y = g.node(self).value.data();
        auto ga = g.accumulate_grad(ida);
        for (std::size_t o = 0; o < sp.outer; ++o) {
          for (std::size_t i = 0; i < sp.inner; ++i) {
            const std::size_t base = o * sp.n * sp.inner + i;
            T total = 0;
            for (std::size_t k = 0; k < sp.n; ++k) total += go[base + k * sp.inner];
            for (std::size_t k = 0; k < sp.n; ++k) {
              const std::size_t j = base + k * sp.inner;
              ga[j] += go[j] - std::exp(y[j]) * total;
            }
          }
        }
      });
}

// ---- concat / slice -------------------------------------------------------------------

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, std::ptrdiff_t axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const Shape& first = parts[0].shape();
  const std::size_t ax = normalize_axis(axis, first.size());
  Shape out_shape = first;
  out_shape[ax] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == ax || s[i] == first[i];
    if (!ok) {
      throw ShapeError("concat: incompatible shapes " + shape_str(first) + " and " +
                       shape_str(s) + " along axis " + std::to_string(ax));
    }
    out_shape[ax] += s[ax];
  }
  const AxisSplit total = split_axis(out_shape, ax);
  std::vector<T> out(numel(out_shape));
  std::vector<std::size_t> ids;
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t len = p.shape()[ax] * total.inner;
    const auto src = p.value().data();
    for (std::size_t o = 0; o < total.outer; ++o) {
      std::copy_n(src.data() + o * len, len, out.data() + o * total.n * total.inner + offset);
    }
    ids.push_back(p.id());
    offsets.push_back(offset);
    offset += len;
  }
  return parts[0].graph().record(
      "concat", parts, Tensor<T>(std::move(out_shape), std::move(out)),
      [ids, offsets, total](Graph<T>& g, std::size_t, std::span<const T> go) {
        for (std::size_t p = 0; p < ids.size(); ++p) {
          if (!g.needs_grad(ids[p])) continue;
          auto ga = g.accumulate_grad(ids[p]);
          const std::size_t len = ga.size() / total.outer;
          for (std::size_t o = 0; o < total.outer; ++o) {
            const T* src = go.data() + o * total.n * total.inner + offsets[p];
            T* dst = ga.data() + o * len;
            for (std::size_t j = 0; j < len; ++j) dst[j] += src[j];
          }
        }
      });
}

template <typename T>
Var<T> slice(Var<T> a, std::ptrdiff_t axis, std::size_t begin, std::size_t end) {
  const std::size_t ax = normalize_axis(axis, a.shape().size());
  const AxisSplit sp = split_axis(a.shape(), ax);
  if (begin > end || end > sp.n) {
    throw ShapeError("slice [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") out of range for axis of length " + std::to_string(sp.n));
  }
  Shape out_shape = a.shape();
  out_shape[ax] = end - begin;
  const std::size_t len = (end - begin) * sp.inner;
  std::vector<T> out(sp.outer * len);
  const auto x = a.value().data();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    std::copy_n(x.data() + (o * sp.n + begin) * sp.inner, len, out.data() + o * len);
  }
  const std::size_t ida = a.id();
  return a.graph().record(
      "slice", {a}, Tensor<T>(std::move(out_shape), std::move(out)),
      [ida, sp, begin, len](Graph<T>& g, std::size_t, std::span<const T> go) {
        auto ga = g.accumulate_grad(ida);
        for (std::size_t o = 0; o < sp.outer; ++o) {
          T* dst = ga.data() + (o * sp.n + begin) * sp.inner;
          const T* src = go.data() + o * len;
          for (std::size_t j = 0; j < len; ++j) dst[j] += src[j];
        }
      });
}

// ---- instantiations -----------------------------------------------------------------

#define VITLAB_INSTANTIATE_OPS(T)                                                       \
  template Var<T> add<T>(Var<T>, Var<T>);                                               \
  template Var<T> sub<T>(Var<T>, Var<T>);                                               \
  template Var<T> mul<T>(Var<T>, Var<T>);                                               \
  template Var<T> div<T>(Var<T>, Var<T>);                                               \
  template Var<T> add_scalar<T>(Var<T>, T);                                             \
  template Var<T> scale<T>(Var<T>, T);                                                  \
  template Var<T> neg<T>(Var<T>);                                                       \
  template Var<T> exp<T>(Var<T>);                                                       \
  template Var<T> log<T>(Var<T>);                                                       \
  template Var<T> sqrt<T>(Var<T>);                                                      \
  template Var<T> square<T>(Var<T>);                                                    \
  template Var<T> gelu<T>(Var<T>);                                                      \
  template Var<T> sigmoid<T>(Var<T>);                                                   \
  template Var<T> softplus<T>(Var<T>);                                                  \
  template Var<T> sum<T>(Var<T>, std::ptrdiff_t, bool);                                 \
  template Var<T> mean<T>(Var<T>, std::ptrdiff_t, bool);                                \
  template Var<T> var<T>(Var<T>, std::ptrdiff_t, bool);                                 \
  template Var<T> max<T>(Var<T>, std::ptrdiff_t, bool);                                 \
  template Var<T> sum_all<T>(Var<T>);                                                   \
  template Var<T> matmul<T>(Var<T>, Var<T>);                                            \
  template Var<T> bmm<T>(Var<T>, Var<T>);                                               \
  template Var<T> reshape<T>(Var<T>, Shape);                                            \
  template Var<T> permute<T>(Var<T>, std::vector<std::size_t>);                         \
  template Var<T> transpose<T>(Var<T>, std::ptrdiff_t, std::ptrdiff_t);                 \
  template Var<T> rearrange<T>(Var<T>, const RearrangePlan&);                           \
  template Var<T> rearrange<T>(Var<T>, std::string_view,                                \
                               const std::map<std::string, std::size_t>&);              \
  template Var<T> broadcast_to<T>(Var<T>, Shape);                                       \
  template Var<T> softmax<T>(Var<T>, std::ptrdiff_t);                                   \
  template Var<T> log_softmax<T>(Var<T>, std::ptrdiff_t);                               \
  template Var<T> concat<T>(const std::vector<Var<T>>&, std::ptrdiff_t);                \
  template Var<T> slice<T>(Var<T>, std::ptrdiff_t, std::size_t, std::size_t);

VITLAB_INSTANTIATE_OPS(float)
VITLAB_INSTANTIATE_OPS(double)

#undef VITLAB_INSTANTIATE_OPS

}  // namespace vitlab
