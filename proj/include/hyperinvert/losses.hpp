#pragma once

#include <nlohmann/json.hpp>

#include "hyperinvert/core/nn.hpp"
#include "hyperinvert/core/ops.hpp"

namespace hyperinvert {

// Reconstruction objective: pixel L2 plus a perceptual term and an
// embedding-similarity term, each behind its own coefficient. The perceptual
// and similarity networks are small frozen random-feature proxies seeded by
// constants, so loss values are comparable across runs and machines.
template <class T>
struct LossConfig {
  T lambda_l2 = T(1);
  T lambda_lpips = T(0.8);
  T lambda_sim = T(0.1);
  std::string sim_mode = "embedding_cosine";  // or "off"

  static LossConfig facial() { return LossConfig{T(1), T(0.8), T(0.1)}; }
  static LossConfig non_facial() { return LossConfig{T(1), T(0.8), T(0.5)}; }
};

template <class T>
nlohmann::json loss_config_to_json(const LossConfig<T>& c) {
  return {{"lambda_l2", static_cast<double>(c.lambda_l2)},
          {"lambda_lpips", static_cast<double>(c.lambda_lpips)},
          {"lambda_sim", static_cast<double>(c.lambda_sim)},
          {"sim_mode", c.sim_mode}};
}

template <class T>
LossConfig<T> loss_config_from_json(const nlohmann::json& j) {
  LossConfig<T> c;
  try {
    if (j.contains("lambda_l2")) c.lambda_l2 = static_cast<T>(j.at("lambda_l2").get<double>());
    if (j.contains("lambda_lpips"))
      c.lambda_lpips = static_cast<T>(j.at("lambda_lpips").get<double>());
    if (j.contains("lambda_sim")) c.lambda_sim = static_cast<T>(j.at("lambda_sim").get<double>());
    if (j.contains("sim_mode")) c.sim_mode = j.at("sim_mode").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed loss config: ") + e.what());
  }
  check_config(c.lambda_l2 >= T(0) && c.lambda_lpips >= T(0) && c.lambda_sim >= T(0),
               "loss coefficients must be non-negative");
  check_config(c.sim_mode == "embedding_cosine" || c.sim_mode == "off",
               "sim_mode must be embedding_cosine or off");
  return c;
}

// Multi-scale random conv features; distance is the mean squared feature
// difference averaged over scales.
template <class T>
class PerceptualProxy {
 public:
  explicit PerceptualProxy(uint64_t seed = 0x70657263ULL, int64_t levels = 3,
                           int64_t channels = 8)
      : levels_(levels) {
    Rng rng(seed);
    for (int64_t l = 0; l < levels_; ++l) {
      Tensor<T> w(Shape{3, 3, 3, channels});
      rng.fill_normal(w, 0.0, std::sqrt(2.0 / 27.0));
      weights_.push_back(Var<T>::constant(std::move(w)));
    }
  }

  Var<T> distance(const Var<T>& a, const Var<T>& b) const {
    check_shape(a.shape() == b.shape() && a.shape().size() == 4,
                "perceptual distance needs matching [N,H,W,3] inputs");
    Var<T> xa = a, xb = b;
    Var<T> total;
    int64_t used = 0;
    for (int64_t l = 0; l < levels_; ++l) {
      Var<T> fa = leaky_relu(conv2d(xa, weights_[static_cast<size_t>(l)], 1, 1), T(0.2));
      Var<T> fb = leaky_relu(conv2d(xb, weights_[static_cast<size_t>(l)], 1, 1), T(0.2));
      Var<T> d = mse(fa, fb);
      total = used == 0 ? d : add(total, d);
      ++used;
      if (xa.shape()[1] < 4 || l + 1 == levels_) break;
      xa = avg_pool2d(xa, 2, 2, 0);
      xb = avg_pool2d(xb, 2, 2, 0);
    }
    return mul_scalar(total, T(1) / static_cast<T>(used));
  }

 private:
  int64_t levels_;
  std::vector<Var<T>> weights_;
};

// Frozen conv embedding; the loss term is mean(1 - cosine similarity).
template <class T>
class SimilarityProxy {
 public:
  explicit SimilarityProxy(uint64_t seed = 0x73696dULL, int64_t width = 16,
                           int64_t embed_dim = 32)
      : width_(width), embed_dim_(embed_dim) {
    Rng rng(seed);
    auto conv = [&](int64_t cin, int64_t cout) {
      Tensor<T> w(Shape{3, 3, cin, cout});
      rng.fill_normal(w, 0.0, std::sqrt(2.0 / (9.0 * static_cast<double>(cin))));
      return Var<T>::constant(std::move(w));
    };
    w1_ = conv(3, width_);
    w2_ = conv(width_, width_);
    w3_ = conv(width_, width_);
    Tensor<T> fw(Shape{width_, embed_dim_});
    rng.fill_normal(fw, 0.0, std::sqrt(1.0 / static_cast<double>(width_)));
    fc_ = Var<T>::constant(std::move(fw));
  }

  Var<T> embed(const Var<T>& x) const {
    check_shape(x.shape().size() == 4 && x.shape()[3] == 3,
                "similarity embed input must be [N,H,W,3]");
    auto ds = [](const Var<T>& v) { return v.shape()[1] >= 4 ? int64_t(2) : int64_t(1); };
    Var<T> h = leaky_relu(conv2d(x, w1_, ds(x), 1), T(0.2));
    h = leaky_relu(conv2d(h, w2_, ds(h), 1), T(0.2));
    h = leaky_relu(conv2d(h, w3_, ds(h), 1), T(0.2));
    int64_t hw = h.shape()[1] * h.shape()[2];
    Var<T> pooled = mul_scalar(sum_axes(h, {1, 2}, false), T(1) / static_cast<T>(hw));
    return matmul(pooled, fc_);  // [N, embed]
  }

  Var<T> one_minus_cosine(const Var<T>& a, const Var<T>& b) const {
    Var<T> ea = embed(a);
    Var<T> eb = embed(b);
    Var<T> dots = sum_axes(mul(ea, eb), {1}, false);
    Var<T> na = sqrt_op(add_scalar(sum_axes(mul(ea, ea), {1}, false), T(1e-8)));
    Var<T> nb = sqrt_op(add_scalar(sum_axes(mul(eb, eb), {1}, false), T(1e-8)));
    Var<T> cos = divide(dots, mul(na, nb));
    return mean_all(add_scalar(mul_scalar(cos, T(-1)), T(1)));
  }

 private:
  int64_t width_;
  int64_t embed_dim_;
  Var<T> w1_, w2_, w3_, fc_;
};

struct LossTerms {
  double l2 = 0;
  double perceptual = 0;
  double similarity = 0;
  double total = 0;
};

template <class T>
class LossModel {
 public:
  explicit LossModel(LossConfig<T> cfg = LossConfig<T>{}) : cfg_(cfg) {}

  const LossConfig<T>& config() const { return cfg_; }

  Var<T> total(const Var<T>& target, const Var<T>& recon, LossTerms* terms = nullptr) const {
    bool use_sim = cfg_.sim_mode != "off";
    Var<T> l2 = mse(target, recon);
    Var<T> lp = perc_.distance(target, recon);
    Var<T> out = add(mul_scalar(l2, cfg_.lambda_l2), mul_scalar(lp, cfg_.lambda_lpips));
    double sim_value = 0;
    if (use_sim) {
      Var<T> sim = sim_.one_minus_cosine(target, recon);
      out = add(out, mul_scalar(sim, cfg_.lambda_sim));
      sim_value = static_cast<double>(sim.value()[0]);
    }
    if (terms) {
      terms->l2 = static_cast<double>(l2.value()[0]);
      terms->perceptual = static_cast<double>(lp.value()[0]);
      terms->similarity = sim_value;
      terms->total = static_cast<double>(out.value()[0]);
    }
    return out;
  }

  double l2_value(const Tensor<T>& a, const Tensor<T>& b) const {
    Var<T> d = mse(Var<T>::constant(a), Var<T>::constant(b));
    return static_cast<double>(d.value()[0]);
  }

 private:
  LossConfig<T> cfg_;
  PerceptualProxy<T> perc_;
  SimilarityProxy<T> sim_;
};

}  // namespace hyperinvert
