#pragma once

#include <map>
#include <string>
#include <vector>

#include "hyperinvert/core/ops.hpp"
#include "hyperinvert/core/random.hpp"

namespace hyperinvert {

// Named parameter collection with a stable iteration order.
template <class T>
class ParamStore {
 public:
  Var<T>& add(const std::string& name, Tensor<T> init) {
    check_config(vars_.find(name) == vars_.end(), "duplicate parameter: " + name);
    order_.push_back(name);
    auto [it, ok] = vars_.emplace(name, Var<T>::param(std::move(init)));
    (void)ok;
    return it->second;
  }

  bool has(const std::string& name) const { return vars_.find(name) != vars_.end(); }

  Var<T>& get(const std::string& name) {
    auto it = vars_.find(name);
    check_config(it != vars_.end(), "unknown parameter: " + name);
    return it->second;
  }
  const Var<T>& get(const std::string& name) const {
    auto it = vars_.find(name);
    check_config(it != vars_.end(), "unknown parameter: " + name);
    return it->second;
  }

  const std::vector<std::string>& names() const { return order_; }
  size_t size() const { return order_.size(); }

  std::vector<Var<T>> all() {
    std::vector<Var<T>> out;
    out.reserve(order_.size());
    for (const auto& name : order_) out.push_back(vars_.at(name));
    return out;
  }

  int64_t count_params() const {
    int64_t n = 0;
    for (const auto& name : order_) n += vars_.at(name).size();
    return n;
  }

  void set_requires_grad(bool rg) {
    for (const auto& name : order_) vars_.at(name).set_requires_grad(rg);
  }

  void zero_grads() {
    for (const auto& name : order_) vars_.at(name).zero_grad();
  }

  bool all_finite() const {
    for (const auto& name : order_)
      if (!vars_.at(name).value().all_finite()) return false;
    return true;
  }

  // Copies values (not gradients). Shapes must match entry by entry.
  void copy_values_from(const ParamStore<T>& other) {
    check_config(order_ == other.order_, "parameter stores have different layouts");
    for (const auto& name : order_) {
      Var<T>& dst = vars_.at(name);
      const Var<T>& src = other.vars_.at(name);
      check_shape(dst.shape() == src.shape(), "parameter shape mismatch for " + name);
      dst.node()->value = src.value();
    }
  }

 private:
  std::vector<std::string> order_;
  std::map<std::string, Var<T>> vars_;
};

// ---------------------------------------------------------------------------
// Initializers
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> he_conv_init(int64_t kh, int64_t kw, int64_t cin, int64_t cout, Rng& rng) {
  Tensor<T> w(Shape{kh, kw, cin, cout});
  rng.fill_normal(w, 0.0, std::sqrt(2.0 / static_cast<double>(kh * kw * cin)));
  return w;
}

template <class T>
Tensor<T> he_fc_init(int64_t in, int64_t out, Rng& rng) {
  Tensor<T> w(Shape{in, out});
  rng.fill_normal(w, 0.0, std::sqrt(2.0 / static_cast<double>(in)));
  return w;
}

template <class T>
Tensor<T> normal_init(Shape shape, double stddev, Rng& rng) {
  Tensor<T> w(std::move(shape));
  rng.fill_normal(w, 0.0, stddev);
  return w;
}

// ---------------------------------------------------------------------------
// Group normalization (per-sample, so batch composition never leaks into
// statistics). Affine parameters are one scale and one shift per channel,
// the same 2*C accounting as a batch-norm affine pair.
// ---------------------------------------------------------------------------

inline int64_t norm_group_count(int64_t channels) {
  int64_t g = 1;
  while (g * 2 <= 32 && channels % (g * 2) == 0) g *= 2;
  return g;
}

template <class T>
Var<T> group_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5)) {
  const Shape& xs = x.shape();
  check_shape(xs.size() == 4, "group_norm: input must be [N,H,W,C]");
  int64_t N = xs[0], H = xs[1], W = xs[2], C = xs[3];
  check_shape(gamma.shape() == Shape{C} && beta.shape() == Shape{C},
              "group_norm: affine params must be [C]");
  int64_t G = norm_group_count(C);
  int64_t Cg = C / G;
  Var<T> xg = reshape(x, Shape{N, H, W, G, Cg});
  T inv_count = T(1) / static_cast<T>(H * W * Cg);
  Var<T> mu = mul_scalar(sum_axes(xg, {1, 2, 4}, true), inv_count);
  Var<T> centered = sub(xg, mu);
  Var<T> var = mul_scalar(sum_axes(mul(centered, centered), {1, 2, 4}, true), inv_count);
  Var<T> normed = mul(centered, rsqrt(var, eps));
  Var<T> flat = reshape(normed, xs);
  return add(mul(flat, gamma), beta);
}

}  // namespace hyperinvert
