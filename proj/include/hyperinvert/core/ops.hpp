#pragma once

#include <cmath>

#include "hyperinvert/core/autodiff.hpp"

namespace hyperinvert {

// ---------------------------------------------------------------------------
// Elementwise / broadcast ops
// ---------------------------------------------------------------------------

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  Tensor<T> out = tensor_add(a.value(), b.value());
  return detail::make_op<T>(std::move(out), {a, b}, [a, b](Node<T>& self) {
    detail::accumulate_grad(*a.node(), self.grad);
    detail::accumulate_grad(*b.node(), self.grad);
  });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  Tensor<T> out = tensor_sub(a.value(), b.value());
  return detail::make_op<T>(std::move(out), {a, b}, [a, b](Node<T>& self) {
    detail::accumulate_grad(*a.node(), self.grad);
    Tensor<T> gneg = tensor_map(self.grad, [](T v) { return -v; });
    detail::accumulate_grad(*b.node(), gneg);
  });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  Tensor<T> out = tensor_mul(a.value(), b.value());
  return detail::make_op<T>(std::move(out), {a, b}, [a, b](Node<T>& self) {
    if (a.requires_grad()) detail::accumulate_grad(*a.node(), tensor_mul(self.grad, b.value()));
    if (b.requires_grad()) detail::accumulate_grad(*b.node(), tensor_mul(self.grad, a.value()));
  });
}

template <class T>
Var<T> divide(const Var<T>& a, const Var<T>& b) {
  Tensor<T> out = broadcast_binary(a.value(), b.value(), [](T x, T y) { return x / y; });
  return detail::make_op<T>(std::move(out), {a, b}, [a, b](Node<T>& self) {
    if (a.requires_grad()) {
      Tensor<T> ga = broadcast_binary(self.grad, b.value(), [](T g, T y) { return g / y; });
      detail::accumulate_grad(*a.node(), ga);
    }
    if (b.requires_grad()) {
      Tensor<T> q = broadcast_binary(self.value, b.value(), [](T o, T y) { return -o / y; });
      detail::accumulate_grad(*b.node(), tensor_mul(self.grad, q));
    }
  });
}

template <class T>
Var<T> add_scalar(const Var<T>& a, T c) {
  Tensor<T> out = tensor_map(a.value(), [c](T v) { return v + c; });
  return detail::make_op<T>(std::move(out), {a},
                            [a](Node<T>& self) { detail::accumulate_grad(*a.node(), self.grad); });
}

template <class T>
Var<T> mul_scalar(const Var<T>& a, T c) {
  Tensor<T> out = tensor_map(a.value(), [c](T v) { return v * c; });
  return detail::make_op<T>(std::move(out), {a}, [a, c](Node<T>& self) {
    detail::accumulate_grad(*a.node(), tensor_map(self.grad, [c](T g) { return g * c; }));
  });
}

template <class T>
Var<T> leaky_relu(const Var<T>& a, T slope) {
  Tensor<T> out = tensor_map(a.value(), [slope](T v) { return v >= T(0) ? v : slope * v; });
  return detail::make_op<T>(std::move(out), {a}, [a, slope](Node<T>& self) {
    Tensor<T> g(a.value().shape());
    const Tensor<T>& x = a.value();
    for (int64_t i = 0; i < g.size(); ++i) g[i] = self.grad[i] * (x[i] >= T(0) ? T(1) : slope);
    detail::accumulate_grad(*a.node(), g);
  });
}

template <class T>
Var<T> tanh_op(const Var<T>& a) {
  Tensor<T> out = tensor_map(a.value(), [](T v) { return std::tanh(v); });
  return detail::make_op<T>(std::move(out), {a}, [a](Node<T>& self) {
    Tensor<T> g(self.value.shape());
    for (int64_t i = 0; i < g.size(); ++i)
      g[i] = self.grad[i] * (T(1) - self.value[i] * self.value[i]);
    detail::accumulate_grad(*a.node(), g);
  });
}

template <class T>
Var<T> sqrt_op(const Var<T>& a) {
  Tensor<T> out = tensor_map(a.value(), [](T v) { return std::sqrt(v); });
  return detail::make_op<T>(std::move(out), {a}, [a](Node<T>& self) {
    Tensor<T> g(self.value.shape());
    for (int64_t i = 0; i < g.size(); ++i) g[i] = self.grad[i] * T(0.5) / self.value[i];
    detail::accumulate_grad(*a.node(), g);
  });
}

// 1 / sqrt(x + eps); used by weight demodulation.
template <class T>
Var<T> rsqrt(const Var<T>& a, T eps) {
  Tensor<T> out = tensor_map(a.value(), [eps](T v) { return T(1) / std::sqrt(v + eps); });
  return detail::make_op<T>(std::move(out), {a}, [a](Node<T>& self) {
    Tensor<T> g(self.value.shape());
    for (int64_t i = 0; i < g.size(); ++i) {
      T o = self.value[i];
      g[i] = self.grad[i] * T(-0.5) * o * o * o;
    }
    detail::accumulate_grad(*a.node(), g);
  });
}

template <class T>
Var<T> square(const Var<T>& a) {
  return mul(a, a);
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <class T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  Tensor<T> out = a.value().reshaped(std::move(shape));
  return detail::make_op<T>(std::move(out), {a}, [a](Node<T>& self) {
    detail::accumulate_grad(*a.node(), self.grad.reshaped(a.value().shape()));
  });
}

template <class T>
Var<T> concat_last(const Var<T>& a, const Var<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  check_shape(sa.size() == sb.size() && sa.size() >= 1, "concat_last: rank mismatch");
  for (size_t i = 0; i + 1 < sa.size(); ++i)
    check_shape(sa[i] == sb[i], "concat_last: leading dims differ");
  int64_t ca = sa.back(), cb = sb.back();
  Shape os = sa;
  os.back() = ca + cb;
  Tensor<T> out(os);
  int64_t rows = out.size() / (ca + cb);
  for (int64_t r = 0; r < rows; ++r) {
    const T* pa = a.value().data() + r * ca;
    const T* pb = b.value().data() + r * cb;
    T* po = out.data() + r * (ca + cb);
    std::copy(pa, pa + ca, po);
    std::copy(pb, pb + cb, po + ca);
  }
  return detail::make_op<T>(std::move(out), {a, b}, [a, b, ca, cb, rows](Node<T>& self) {
    if (a.requires_grad()) {
      Tensor<T> ga(a.value().shape());
      for (int64_t r = 0; r < rows; ++r)
        std::copy(self.grad.data() + r * (ca + cb), self.grad.data() + r * (ca + cb) + ca,
                  ga.data() + r * ca);
      detail::accumulate_grad(*a.node(), ga);
    }
    if (b.requires_grad()) {
      Tensor<T> gb(b.value().shape());
      for (int64_t r = 0; r < rows; ++r)
        std::copy(self.grad.data() + r * (ca + cb) + ca, self.grad.data() + (r + 1) * (ca + cb),
                  gb.data() + r * cb);
      detail::accumulate_grad(*b.node(), gb);
    }
  });
}

template <class T>
Var<T> slice_last(const Var<T>& a, int64_t start, int64_t len) {
  const Shape& sa = a.shape();
  check_shape(!sa.empty(), "slice_last: rank-0 input");
  int64_t c = sa.back();
  check_shape(start >= 0 && len >= 1 && start + len <= c, "slice_last: bad range");
  Shape os = sa;
  os.back() = len;
  Tensor<T> out(os);
  int64_t rows = a.size() / c;
  for (int64_t r = 0; r < rows; ++r)
    std::copy(a.value().data() + r * c + start, a.value().data() + r * c + start + len,
              out.data() + r * len);
  return detail::make_op<T>(std::move(out), {a}, [a, start, len, c, rows](Node<T>& self) {
    Tensor<T> ga(a.value().shape());
    for (int64_t r = 0; r < rows; ++r)
      std::copy(self.grad.data() + r * len, self.grad.data() + (r + 1) * len,
                ga.data() + r * c + start);
    detail::accumulate_grad(*a.node(), ga);
  });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

namespace detail {
// Broadcast `g` (keepdims-shaped) up to `target` and return the expansion.
template <class T>
Tensor<T> expand_to(const Tensor<T>& g, const Shape& target) {
  Tensor<T> out(target);
  broadcast_walk<T>(target, target, g.shape(),
                    [&](int64_t i, int64_t, int64_t og) { out[i] = g[og]; });
  return out;
}
}  // namespace detail

template <class T>
Var<T> sum_axes(const Var<T>& a, std::vector<int64_t> axes, bool keepdims) {
  Tensor<T> out = reduce_sum(a.value(), axes, keepdims);
  Shape keep_shape = reduce_sum(a.value(), axes, true).shape();
  return detail::make_op<T>(std::move(out), {a}, [a, keep_shape](Node<T>& self) {
    Tensor<T> g = self.grad.reshaped(keep_shape);
    detail::accumulate_grad(*a.node(), detail::expand_to(g, a.value().shape()));
  });
}

template <class T>
Var<T> sum_all(const Var<T>& a) {
  T s = 0;
  for (int64_t i = 0; i < a.value().size(); ++i) s += a.value()[i];
  return detail::make_op<T>(Tensor<T>::scalar(s), {a}, [a](Node<T>& self) {
    T g = self.grad[0];
    Tensor<T> ga = Tensor<T>::full(a.value().shape(), g);
    detail::accumulate_grad(*a.node(), ga);
  });
}

template <class T>
Var<T> mean_all(const Var<T>& a) {
  check_shape(a.size() > 0, "mean_all: empty tensor");
  return mul_scalar(sum_all(a), T(1) / static_cast<T>(a.size()));
}

// ---------------------------------------------------------------------------
// Matrix multiply: [m,k] x [k,n] -> [m,n]
// ---------------------------------------------------------------------------

namespace detail {
template <class T>
void gemm_nn(const T* a, const T* b, T* out, int64_t m, int64_t k, int64_t n) {
#pragma omp parallel for schedule(static)
  for (int64_t r = 0; r < m; ++r) {
    T* orow = out + r * n;
    for (int64_t j = 0; j < n; ++j) orow[j] = T(0);
    const T* arow = a + r * k;
    for (int64_t p = 0; p < k; ++p) {
      T av = arow[p];
      if (av == T(0)) continue;
      const T* brow = b + p * n;
      for (int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
}
}  // namespace detail

template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  check_shape(a.shape().size() == 2 && b.shape().size() == 2, "matmul expects rank-2 inputs");
  int64_t m = a.shape()[0], k = a.shape()[1], k2 = b.shape()[0], n = b.shape()[1];
  check_shape(k == k2, "matmul inner dims differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  Tensor<T> out(Shape{m, n});
  detail::gemm_nn(a.value().data(), b.value().data(), out.data(), m, k, n);
  return detail::make_op<T>(std::move(out), {a, b}, [a, b, m, k, n](Node<T>& self) {
    if (a.requires_grad()) {
      // ga = g . b^T
      Tensor<T> ga(Shape{m, k});
      const T* g = self.grad.data();
      const T* bp = b.value().data();
#pragma omp parallel for schedule(static)
      for (int64_t r = 0; r < m; ++r) {
        const T* grow = g + r * n;
        T* garow = ga.data() + r * k;
        for (int64_t p = 0; p < k; ++p) {
          const T* brow = bp + p * n;
          T s = 0;
          for (int64_t j = 0; j < n; ++j) s += grow[j] * brow[j];
          garow[p] = s;
        }
      }
      detail::accumulate_grad(*a.node(), ga);
    }
    if (b.requires_grad()) {
      // gb = a^T . g
      Tensor<T> gb(Shape{k, n});
      const T* g = self.grad.data();
      const T* ap = a.value().data();
#pragma omp parallel for schedule(static)
      for (int64_t p = 0; p < k; ++p) {
        T* gbrow = gb.data() + p * n;
        for (int64_t j = 0; j < n; ++j) gbrow[j] = T(0);
        for (int64_t r = 0; r < m; ++r) {
          T av = ap[r * k + p];
          if (av == T(0)) continue;
          const T* grow = g + r * n;
          for (int64_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
        }
      }
      detail::accumulate_grad(*b.node(), gb);
    }
  });
}

// ---------------------------------------------------------------------------
// Convolution. Activations [N,H,W,I]; kernel [kh,kw,I,O] (shared) or
// [N,kh,kw,I,O] (one kernel per sample, used for style/offset modulation).
// ---------------------------------------------------------------------------

namespace detail {

template <class T>
void conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, Tensor<T>& out, int64_t stride,
                    int64_t pad, bool per_sample) {
  const Shape& xs = x.shape();
  int64_t N = xs[0], H = xs[1], W = xs[2], I = xs[3];
  const Shape& ws = w.shape();
  int64_t kh = ws[per_sample ? 1 : 0], kw = ws[per_sample ? 2 : 1], O = ws[per_sample ? 4 : 3];
  int64_t Ho = out.shape()[1], Wo = out.shape()[2];
  const T* xp = x.data();
  const T* wp = w.data();
  T* op = out.data();
  int64_t wsample = kh * kw * I * O;
#pragma omp parallel for schedule(static)
  for (int64_t r = 0; r < N * Ho; ++r) {
    int64_t n = r / Ho, oy = r % Ho;
    const T* wn = wp + (per_sample ? n * wsample : 0);
    std::vector<T> acc(static_cast<size_t>(O));
    for (int64_t ox = 0; ox < Wo; ++ox) {
      std::fill(acc.begin(), acc.end(), T(0));
      for (int64_t ky = 0; ky < kh; ++ky) {
        int64_t iy = oy * stride + ky - pad;
        if (iy < 0 || iy >= H) continue;
        for (int64_t kx = 0; kx < kw; ++kx) {
          int64_t ix = ox * stride + kx - pad;
          if (ix < 0 || ix >= W) continue;
          const T* xrow = xp + ((n * H + iy) * W + ix) * I;
          const T* wbase = wn + (ky * kw + kx) * I * O;
          for (int64_t i = 0; i < I; ++i) {
            T xv = xrow[i];
            if (xv == T(0)) continue;
            const T* wrow = wbase + i * O;
            for (int64_t o = 0; o < O; ++o) acc[static_cast<size_t>(o)] += xv * wrow[o];
          }
        }
      }
      T* orow = op + ((n * Ho + oy) * Wo + ox) * O;
      std::copy(acc.begin(), acc.end(), orow);
    }
  }
}

template <class T>
void conv2d_backward_input(const Tensor<T>& g, const Tensor<T>& w, Tensor<T>& gx, int64_t stride,
                           int64_t pad, bool per_sample) {
  const Shape& xs = gx.shape();
  int64_t N = xs[0], H = xs[1], W = xs[2], I = xs[3];
  const Shape& ws = w.shape();
  int64_t kh = ws[per_sample ? 1 : 0], kw = ws[per_sample ? 2 : 1], O = ws[per_sample ? 4 : 3];
  int64_t Ho = g.shape()[1], Wo = g.shape()[2];
  const T* gp = g.data();
  const T* wp = w.data();
  T* gxp = gx.data();
  int64_t wsample = kh * kw * I * O;
  // Scatter within a sample only, so parallelizing over n is race-free.
#pragma omp parallel for schedule(static)
  for (int64_t n = 0; n < N; ++n) {
    const T* wn = wp + (per_sample ? n * wsample : 0);
    for (int64_t oy = 0; oy < Ho; ++oy) {
      for (int64_t ox = 0; ox < Wo; ++ox) {
        const T* grow = gp + ((n * Ho + oy) * Wo + ox) * O;
        for (int64_t ky = 0; ky < kh; ++ky) {
          int64_t iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= H) continue;
          for (int64_t kx = 0; kx < kw; ++kx) {
            int64_t ix = ox * stride + kx - pad;
            if (ix < 0 || ix >= W) continue;
            T* gxrow = gxp + ((n * H + iy) * W + ix) * I;
            const T* wbase = wn + (ky * kw + kx) * I * O;
            for (int64_t i = 0; i < I; ++i) {
              const T* wrow = wbase + i * O;
              T s = 0;
              for (int64_t o = 0; o < O; ++o) s += grow[o] * wrow[o];
              gxrow[i] += s;
            }
          }
        }
      }
    }
  }
}

template <class T>
void conv2d_backward_weight(const Tensor<T>& g, const Tensor<T>& x, Tensor<T>& gw, int64_t stride,
                            int64_t pad, bool per_sample) {
  const Shape& xs = x.shape();
  int64_t N = xs[0], H = xs[1], W = xs[2], I = xs[3];
  const Shape& ws = gw.shape();
  int64_t kh = ws[per_sample ? 1 : 0], kw = ws[per_sample ? 2 : 1], O = ws[per_sample ? 4 : 3];
  int64_t Ho = g.shape()[1], Wo = g.shape()[2];
  const T* gp = g.data();
  const T* xp = x.data();
  T* gwp = gw.data();
  if (per_sample) {
#pragma omp parallel for schedule(static)
    for (int64_t n = 0; n < N; ++n) {
      T* gwn = gwp + n * kh * kw * I * O;
      for (int64_t oy = 0; oy < Ho; ++oy) {
        for (int64_t ox = 0; ox < Wo; ++ox) {
          const T* grow = gp + ((n * Ho + oy) * Wo + ox) * O;
          for (int64_t ky = 0; ky < kh; ++ky) {
            int64_t iy = oy * stride + ky - pad;
            if (iy < 0 || iy >= H) continue;
            for (int64_t kx = 0; kx < kw; ++kx) {
              int64_t ix = ox * stride + kx - pad;
              if (ix < 0 || ix >= W) continue;
              const T* xrow = xp + ((n * H + iy) * W + ix) * I;
              T* gwbase = gwn + (ky * kw + kx) * I * O;
              for (int64_t i = 0; i < I; ++i) {
                T xv = xrow[i];
                if (xv == T(0)) continue;
                T* gwrow = gwbase + i * O;
                for (int64_t o = 0; o < O; ++o) gwrow[o] += xv * grow[o];
              }
            }
          }
        }
      }
    }
  } else {
    // Each task owns one gw[ky,kx,i,:] slice; addition order is fixed
    // regardless of thread count.
#pragma omp parallel for schedule(static)
    for (int64_t t = 0; t < kh * kw * I; ++t) {
      int64_t ky = t / (kw * I), kx = (t / I) % kw, i = t % I;
      T* gwrow = gwp + t * O;
      for (int64_t n = 0; n < N; ++n) {
        for (int64_t oy = 0; oy < Ho; ++oy) {
          int64_t iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= H) continue;
          for (int64_t ox = 0; ox < Wo; ++ox) {
            int64_t ix = ox * stride + kx - pad;
            if (ix < 0 || ix >= W) continue;
            T xv = xp[((n * H + iy) * W + ix) * I + i];
            if (xv == T(0)) continue;
            const T* grow = gp + ((n * Ho + oy) * Wo + ox) * O;
            for (int64_t o = 0; o < O; ++o) gwrow[o] += xv * grow[o];
          }
        }
      }
    }
  }
}

}  // namespace detail

template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, int64_t stride, int64_t pad) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  check_shape(xs.size() == 4, "conv2d: input must be [N,H,W,C], got " + shape_str(xs));
  check_shape(ws.size() == 4 || ws.size() == 5,
              "conv2d: kernel must be [kh,kw,I,O] or [N,kh,kw,I,O], got " + shape_str(ws));
  bool per_sample = ws.size() == 5;
  int64_t N = xs[0], H = xs[1], W = xs[2], I = xs[3];
  int64_t kh = ws[per_sample ? 1 : 0], kw = ws[per_sample ? 2 : 1];
  int64_t wi = ws[per_sample ? 3 : 2], O = ws[per_sample ? 4 : 3];
  check_shape(wi == I, "conv2d: channel mismatch, input " + shape_str(xs) + " kernel " + shape_str(ws));
  if (per_sample) check_shape(ws[0] == N, "conv2d: per-sample kernel batch mismatch");
  int64_t Ho = (H + 2 * pad - kh) / stride + 1;
  int64_t Wo = (W + 2 * pad - kw) / stride + 1;
  check_shape(Ho >= 1 && Wo >= 1, "conv2d: empty output for input " + shape_str(xs));
  Tensor<T> out(Shape{N, Ho, Wo, O});
  detail::conv2d_forward(x.value(), w.value(), out, stride, pad, per_sample);
  return detail::make_op<T>(std::move(out), {x, w},
                            [x, w, stride, pad, per_sample](Node<T>& self) {
                              if (x.requires_grad()) {
                                Tensor<T> gx(x.value().shape());
                                detail::conv2d_backward_input(self.grad, w.value(), gx, stride, pad,
                                                              per_sample);
                                detail::accumulate_grad(*x.node(), gx);
                              }
                              if (w.requires_grad()) {
                                Tensor<T> gw(w.value().shape());
                                detail::conv2d_backward_weight(self.grad, x.value(), gw, stride,
                                                               pad, per_sample);
                                detail::accumulate_grad(*w.node(), gw);
                              }
                            });
}

// ---------------------------------------------------------------------------
// Pooling / resampling
// ---------------------------------------------------------------------------

template <class T>
Var<T> avg_pool2d(const Var<T>& x, int64_t k, int64_t stride, int64_t pad) {
  const Shape& xs = x.shape();
  check_shape(xs.size() == 4, "avg_pool2d: input must be [N,H,W,C]");
  int64_t N = xs[0], H = xs[1], W = xs[2], C = xs[3];
  int64_t Ho = (H + 2 * pad - k) / stride + 1;
  int64_t Wo = (W + 2 * pad - k) / stride + 1;
  check_shape(Ho >= 1 && Wo >= 1, "avg_pool2d: empty output");
  Tensor<T> out(Shape{N, Ho, Wo, C});
  const T* xp = x.value().data();
  T* op = out.data();
  T inv = T(1) / static_cast<T>(k * k);
#pragma omp parallel for schedule(static)
  for (int64_t r = 0; r < N * Ho; ++r) {
    int64_t n = r / Ho, oy = r % Ho;
    for (int64_t ox = 0; ox < Wo; ++ox) {
      T* orow = op + ((n * Ho + oy) * Wo + ox) * C;
      for (int64_t c = 0; c < C; ++c) orow[c] = T(0);
      for (int64_t ky = 0; ky < k; ++ky) {
        int64_t iy = oy * stride + ky - pad;
        if (iy < 0 || iy >= H) continue;
        for (int64_t kx = 0; kx < k; ++kx) {
          int64_t ix = ox * stride + kx - pad;
          if (ix < 0 || ix >= W) continue;
          const T* xrow = xp + ((n * H + iy) * W + ix) * C;
          for (int64_t c = 0; c < C; ++c) orow[c] += xrow[c];
        }
      }
      for (int64_t c = 0; c < C; ++c) orow[c] *= inv;
    }
  }
  return detail::make_op<T>(
      std::move(out), {x}, [x, k, stride, pad, N, H, W, C, Ho, Wo, inv](Node<T>& self) {
        Tensor<T> gx(x.value().shape());
        const T* gp = self.grad.data();
#pragma omp parallel for schedule(static)
        for (int64_t n = 0; n < N; ++n) {
          for (int64_t oy = 0; oy < Ho; ++oy) {
            for (int64_t ox = 0; ox < Wo; ++ox) {
              const T* grow = gp + ((n * Ho + oy) * Wo + ox) * C;
              for (int64_t ky = 0; ky < k; ++ky) {
                int64_t iy = oy * stride + ky - pad;
                if (iy < 0 || iy >= H) continue;
                for (int64_t kx = 0; kx < k; ++kx) {
                  int64_t ix = ox * stride + kx - pad;
                  if (ix < 0 || ix >= W) continue;
                  T* gxrow = gx.data() + ((n * H + iy) * W + ix) * C;
                  for (int64_t c = 0; c < C; ++c) gxrow[c] += grow[c] * inv;
                }
              }
            }
          }
        }
        detail::accumulate_grad(*x.node(), gx);
      });
}

template <class T>
Var<T> upsample2x_nearest(const Var<T>& x) {
  const Shape& xs = x.shape();
  check_shape(xs.size() == 4, "upsample2x_nearest: input must be [N,H,W,C]");
  int64_t N = xs[0], H = xs[1], W = xs[2], C = xs[3];
  Tensor<T> out(Shape{N, 2 * H, 2 * W, C});
  const T* xp = x.value().data();
  T* op = out.data();
#pragma omp parallel for schedule(static)
  for (int64_t r = 0; r < N * H; ++r) {
    int64_t n = r / H, y = r % H;
    for (int64_t xx = 0; xx < W; ++xx) {
      const T* src = xp + ((n * H + y) * W + xx) * C;
      for (int64_t dy = 0; dy < 2; ++dy) {
        for (int64_t dx = 0; dx < 2; ++dx) {
          T* dst = op + ((n * 2 * H + 2 * y + dy) * 2 * W + 2 * xx + dx) * C;
          std::copy(src, src + C, dst);
        }
      }
    }
  }
  return detail::make_op<T>(std::move(out), {x}, [x, N, H, W, C](Node<T>& self) {
    Tensor<T> gx(x.value().shape());
    const T* gp = self.grad.data();
#pragma omp parallel for schedule(static)
    for (int64_t r = 0; r < N * H; ++r) {
      int64_t n = r / H, y = r % H;
      for (int64_t xx = 0; xx < W; ++xx) {
        T* dst = gx.data() + ((n * H + y) * W + xx) * C;
        for (int64_t dy = 0; dy < 2; ++dy) {
          for (int64_t dx = 0; dx < 2; ++dx) {
            const T* src = gp + ((n * 2 * H + 2 * y + dy) * 2 * W + 2 * xx + dx) * C;
            for (int64_t c = 0; c < C; ++c) dst[c] += src[c];
          }
        }
      }
    }
    detail::accumulate_grad(*x.node(), gx);
  });
}

// ---------------------------------------------------------------------------
// Composite helpers
// ---------------------------------------------------------------------------

// x [N,in] . w [in,out] + b [out]
template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  return add(matmul(x, w), b);
}

// Mean of squared differences over every element.
template <class T>
Var<T> mse(const Var<T>& a, const Var<T>& b) {
  Var<T> d = sub(a, b);
  return mean_all(mul(d, d));
}

}  // namespace hyperinvert
