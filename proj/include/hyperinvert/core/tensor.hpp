#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <initializer_list>
#include <vector>

#include "hyperinvert/core/common.hpp"

namespace hyperinvert {

// Dense row-major tensor. Activations use NHWC layout, convolution kernels
// [kh, kw, c_in, c_out]; fully-connected weights [in, out].
template <class T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_numel(shape_), T(0)) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape(static_cast<int64_t>(data_.size()) == shape_numel(shape_),
                "tensor data size does not match shape " + shape_str(shape_));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, T v) {
    Tensor t(std::move(shape));
    t.fill(v);
    return t;
  }
  static Tensor scalar(T v) { return Tensor(Shape{}, std::vector<T>{v}); }

  const Shape& shape() const { return shape_; }
  int64_t rank() const { return static_cast<int64_t>(shape_.size()); }
  int64_t size() const { return static_cast<int64_t>(data_.size()); }
  int64_t dim(int64_t i) const { return shape_[static_cast<size_t>(i)]; }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  T& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor reshaped(Shape shape) const {
    check_shape(shape_numel(shape) == size(),
                "reshape " + shape_str(shape_) + " -> " + shape_str(shape) + " changes element count");
    return Tensor(std::move(shape), data_);
  }

  template <class U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.size());
    for (size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return Tensor<U>(shape_, std::move(out));
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (const T& v : data_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

namespace detail {

// Row-major strides with 0 on broadcast (size-1) axes, aligned to `out` rank.
inline std::vector<int64_t> broadcast_strides(const Shape& in, const Shape& out) {
  std::vector<int64_t> strides(out.size(), 0);
  int64_t stride = 1;
  int64_t off = static_cast<int64_t>(out.size()) - static_cast<int64_t>(in.size());
  for (int64_t i = static_cast<int64_t>(in.size()) - 1; i >= 0; --i) {
    int64_t od = out[static_cast<size_t>(i + off)];
    check_shape(in[static_cast<size_t>(i)] == od || in[static_cast<size_t>(i)] == 1,
                "cannot broadcast " + shape_str(in) + " to " + shape_str(out));
    strides[static_cast<size_t>(i + off)] = (in[static_cast<size_t>(i)] == 1) ? 0 : stride;
    stride *= in[static_cast<size_t>(i)];
  }
  return strides;
}

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (size_t i = 0; i < rank; ++i) {
    int64_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    int64_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    check_shape(da == db || da == 1 || db == 1,
                "shapes " + shape_str(a) + " and " + shape_str(b) + " do not broadcast");
    out[i] = std::max(da, db);
  }
  return out;
}

// Odometer walk over `out_shape`, advancing offsets into a and b without
// div/mod per element.
template <class T, class F>
void broadcast_walk(const Shape& out_shape, const Shape& sa, const Shape& sb, F&& f) {
  std::vector<int64_t> stra = broadcast_strides(sa, out_shape);
  std::vector<int64_t> strb = broadcast_strides(sb, out_shape);
  int64_t n = shape_numel(out_shape);
  size_t rank = out_shape.size();
  if (rank == 0) {
    f(0, 0, 0);
    return;
  }
  std::vector<int64_t> idx(rank, 0);
  int64_t oa = 0, ob = 0;
  for (int64_t i = 0; i < n; ++i) {
    f(i, oa, ob);
    for (int64_t d = static_cast<int64_t>(rank) - 1; d >= 0; --d) {
      size_t ud = static_cast<size_t>(d);
      if (++idx[ud] < out_shape[ud]) {
        oa += stra[ud];
        ob += strb[ud];
        break;
      }
      oa -= stra[ud] * (out_shape[ud] - 1);
      ob -= strb[ud] * (out_shape[ud] - 1);
      idx[ud] = 0;
    }
  }
}

}  // namespace detail

template <class T, class F>
Tensor<T> broadcast_binary(const Tensor<T>& a, const Tensor<T>& b, F&& f) {
  Shape os = detail::broadcast_shape(a.shape(), b.shape());
  Tensor<T> out(os);
  if (a.shape() == b.shape()) {
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    int64_t n = out.size();
    for (int64_t i = 0; i < n; ++i) po[i] = f(pa[i], pb[i]);
    return out;
  }
  detail::broadcast_walk<T>(os, a.shape(), b.shape(),
                            [&](int64_t i, int64_t oa, int64_t ob) { out[i] = f(a[oa], b[ob]); });
  return out;
}

template <class T>
Tensor<T> tensor_add(const Tensor<T>& a, const Tensor<T>& b) {
  return broadcast_binary(a, b, [](T x, T y) { return x + y; });
}
template <class T>
Tensor<T> tensor_sub(const Tensor<T>& a, const Tensor<T>& b) {
  return broadcast_binary(a, b, [](T x, T y) { return x - y; });
}
template <class T>
Tensor<T> tensor_mul(const Tensor<T>& a, const Tensor<T>& b) {
  return broadcast_binary(a, b, [](T x, T y) { return x * y; });
}

template <class T, class F>
Tensor<T> tensor_map(const Tensor<T>& a, F&& f) {
  Tensor<T> out(a.shape());
  for (int64_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

// Sum of `t` over `axes`. With keepdims the reduced axes stay as size 1.
template <class T>
Tensor<T> reduce_sum(const Tensor<T>& t, const std::vector<int64_t>& axes, bool keepdims) {
  std::vector<bool> reduced(t.shape().size(), false);
  for (int64_t a : axes) {
    check_shape(a >= 0 && a < t.rank(), "reduce axis out of range");
    reduced[static_cast<size_t>(a)] = true;
  }
  Shape out_shape;
  Shape kept_shape(t.shape().size(), 1);
  for (size_t i = 0; i < t.shape().size(); ++i) {
    if (!reduced[i]) {
      kept_shape[i] = t.shape()[i];
      out_shape.push_back(t.shape()[i]);
    } else if (keepdims) {
      out_shape.push_back(1);
    }
  }
  Tensor<T> acc(kept_shape);
  detail::broadcast_walk<T>(t.shape(), t.shape(), kept_shape,
                            [&](int64_t, int64_t oi, int64_t oo) { acc[oo] += t[oi]; });
  return acc.reshaped(out_shape);
}

// Reduce `g` (a gradient broadcast up to some larger shape) back to `target`.
template <class T>
Tensor<T> reduce_to_shape(const Tensor<T>& g, const Shape& target) {
  if (g.shape() == target) return g;
  Shape padded(g.shape().size(), 1);
  size_t off = g.shape().size() - target.size();
  for (size_t i = 0; i < target.size(); ++i) padded[i + off] = target[i];
  Tensor<T> acc(padded);
  detail::broadcast_walk<T>(g.shape(), g.shape(), padded,
                            [&](int64_t, int64_t oi, int64_t oo) { acc[oo] += g[oi]; });
  return acc.reshaped(target);
}

template <class T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  check_shape(a.same_shape(b), "max_abs_diff: shape mismatch");
  T m = 0;
  for (int64_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace hyperinvert
