#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hyperinvert/core/autodiff.hpp"

namespace hyperinvert {

// First-order optimizers over a fixed parameter list.
//   adam   - classic bias-corrected Adam
//   radam  - Adam with the rectified variance schedule (plain momentum SGD
//            while the variance estimate is unreliable)
//   ranger - radam wrapped in lookahead (slow weights pulled toward fast
//            weights every k steps)
struct OptimConfig {
  std::string kind = "ranger";
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  int64_t lookahead_k = 6;
  double lookahead_alpha = 0.5;

  void validate() const {
    check_config(kind == "adam" || kind == "radam" || kind == "ranger",
                 "unknown optimizer kind: " + kind);
    check_config(lr > 0, "learning rate must be positive");
    check_config(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1, "betas must be in [0,1)");
    check_config(lookahead_k >= 1, "lookahead_k must be >= 1");
  }
};

inline nlohmann::json optim_config_to_json(const OptimConfig& c) {
  return {{"kind", c.kind}, {"lr", c.lr},
          {"beta1", c.beta1}, {"beta2", c.beta2},
          {"eps", c.eps}, {"weight_decay", c.weight_decay},
          {"lookahead_k", c.lookahead_k}, {"lookahead_alpha", c.lookahead_alpha}};
}

inline OptimConfig optim_config_from_json(const nlohmann::json& j) {
  OptimConfig c;
  try {
    if (j.contains("kind")) c.kind = j.at("kind").get<std::string>();
    if (j.contains("lr")) c.lr = j.at("lr").get<double>();
    if (j.contains("beta1")) c.beta1 = j.at("beta1").get<double>();
    if (j.contains("beta2")) c.beta2 = j.at("beta2").get<double>();
    if (j.contains("eps")) c.eps = j.at("eps").get<double>();
    if (j.contains("weight_decay")) c.weight_decay = j.at("weight_decay").get<double>();
    if (j.contains("lookahead_k")) c.lookahead_k = j.at("lookahead_k").get<int64_t>();
    if (j.contains("lookahead_alpha")) c.lookahead_alpha = j.at("lookahead_alpha").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed optimizer config: ") + e.what());
  }
  c.validate();
  return c;
}

template <class T>
class Optimizer {
 public:
  Optimizer(std::vector<Var<T>> params, OptimConfig cfg)
      : params_(std::move(params)), cfg_(cfg) {
    cfg_.validate();
    rectified_ = cfg_.kind != "adam";
    lookahead_ = cfg_.kind == "ranger";
    for (auto& p : params_) {
      m_.push_back(Tensor<T>::zeros(p.shape()));
      v_.push_back(Tensor<T>::zeros(p.shape()));
      if (lookahead_) slow_.push_back(p.value());
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  void step() {
    ++t_;
    double b1 = cfg_.beta1, b2 = cfg_.beta2;
    double bc1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    double rho_inf = 2.0 / (1.0 - b2) - 1.0;
    double rho_t =
        rho_inf - 2.0 * static_cast<double>(t_) * std::pow(b2, static_cast<double>(t_)) / bc2;
    bool use_var = !rectified_ || rho_t > 4.0;
    double rect = 1.0;
    if (rectified_ && use_var) {
      rect = std::sqrt(((rho_t - 4.0) * (rho_t - 2.0) * rho_inf) /
                       ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t));
    }
    for (size_t i = 0; i < params_.size(); ++i) {
      Var<T>& p = params_[i];
      const Tensor<T>& g = p.grad();
      Tensor<T>& m = m_[i];
      Tensor<T>& v = v_[i];
      T* pv = p.value().data();
      for (int64_t e = 0; e < g.size(); ++e) {
        double ge = static_cast<double>(g[e]);
        double me = b1 * static_cast<double>(m[e]) + (1.0 - b1) * ge;
        double ve = b2 * static_cast<double>(v[e]) + (1.0 - b2) * ge * ge;
        m[e] = static_cast<T>(me);
        v[e] = static_cast<T>(ve);
        double mhat = me / bc1;
        double update;
        if (use_var) {
          update = cfg_.lr * rect * mhat / (std::sqrt(ve / bc2) + cfg_.eps);
        } else {
          update = cfg_.lr * mhat;
        }
        if (cfg_.weight_decay > 0) update += cfg_.lr * cfg_.weight_decay * static_cast<double>(pv[e]);
        pv[e] = static_cast<T>(static_cast<double>(pv[e]) - update);
      }
    }
    if (lookahead_ && t_ % cfg_.lookahead_k == 0) {
      double a = cfg_.lookahead_alpha;
      for (size_t i = 0; i < params_.size(); ++i) {
        Tensor<T>& s = slow_[i];
        T* pv = params_[i].value().data();
        for (int64_t e = 0; e < s.size(); ++e) {
          double se = static_cast<double>(s[e]) +
                      a * (static_cast<double>(pv[e]) - static_cast<double>(s[e]));
          s[e] = static_cast<T>(se);
          pv[e] = s[e];
        }
      }
    }
  }

  int64_t steps_taken() const { return t_; }

 private:
  std::vector<Var<T>> params_;
  OptimConfig cfg_;
  std::vector<Tensor<T>> m_, v_;
  std::vector<Tensor<T>> slow_;
  bool rectified_ = true;
  bool lookahead_ = true;
  int64_t t_ = 0;
};

}  // namespace hyperinvert
