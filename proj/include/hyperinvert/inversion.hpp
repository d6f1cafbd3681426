#pragma once

#include <chrono>
#include <type_traits>
#include <vector>

#include "hyperinvert/core/optim.hpp"
#include "hyperinvert/encoder.hpp"
#include "hyperinvert/generator.hpp"
#include "hyperinvert/hypernet.hpp"
#include "hyperinvert/losses.hpp"
#include "hyperinvert/modulation.hpp"

namespace hyperinvert {

template <class T>
struct InversionResult {
  Tensor<T> w;                              // [N, latent_dim]
  OffsetTensors<T> offsets;                 // accumulated over all steps
  Tensor<T> reconstruction;                 // [N, H, W, 3]
  std::vector<double> per_step_distortion;  // length T+1, entry 0 has no offsets
};

namespace detail {

template <class T>
class InferenceGuard {
 public:
  template <class M>
  explicit InferenceGuard(M& model) : store_(&model.params()) {
    store_->set_requires_grad(false);
  }
  ~InferenceGuard() { store_->set_requires_grad(true); }
  InferenceGuard(const InferenceGuard&) = delete;
  InferenceGuard& operator=(const InferenceGuard&) = delete;

 private:
  ParamStore<T>* store_;
};

}  // namespace detail

// Gradient-free refinement loop: encode once, then repeatedly predict offsets
// against the current reconstruction and re-synthesize with the running sum.
template <class T>
InversionResult<T> invert(const Tensor<T>& x, Generator<T>& g, LatentEncoder<T>& enc,
                          HyperNet<T>& h, int64_t steps) {
  check_config(steps >= 1, "refinement step count must be >= 1");
  detail::InferenceGuard<T> gg(g), ge(enc), gh(h);
  LossModel<T> lm;
  InversionResult<T> res;
  Var<T> xc = Var<T>::constant(x);
  res.w = enc.encode(xc).value();
  Var<T> wc = Var<T>::constant(res.w);
  Var<T> y = g.synthesize(wc);
  res.per_step_distortion.push_back(lm.l2_value(x, y.value()));
  OffsetMap<T> acc;
  for (int64_t t = 1; t <= steps; ++t) {
    OffsetMap<T> delta = h.predict_offsets(xc, y);
    acc = acc.empty() ? std::move(delta) : accumulate_offsets<T>({acc, delta});
    y = g.synthesize(wc, &acc);
    res.per_step_distortion.push_back(lm.l2_value(x, y.value()));
  }
  res.offsets = materialize_offsets(acc);
  res.reconstruction = y.value();
  return res;
}

// Direct latent-space baseline: gradient descent on w itself. Returns the
// best latent seen, by total loss.
template <class T>
Tensor<T> optimize_latent(const Tensor<T>& x, Generator<T>& g, int64_t steps, double lr,
                          const Tensor<std::type_identity_t<T>>* w_init = nullptr,
                          uint64_t seed = 0, std::vector<double>* l2_trace = nullptr) {
  check_config(steps >= 1, "steps must be >= 1");
  detail::InferenceGuard<T> gg(g);
  int64_t n = x.shape()[0];
  Tensor<T> w0;
  if (w_init) {
    w0 = *w_init;
  } else {
    Rng rng(Rng::derive(seed, 0x776f7074ULL));
    w0 = g.map_latent(Var<T>::constant(g.sample_latents(n, rng))).value();
  }
  Var<T> w = Var<T>::param(w0);
  OptimConfig oc;
  oc.kind = "adam";
  oc.lr = lr;
  Optimizer<T> opt({w}, oc);
  LossModel<T> lm;
  Var<T> xc = Var<T>::constant(x);
  Tensor<T> best = w.value();
  double best_loss = std::numeric_limits<double>::infinity();
  for (int64_t s = 0; s < steps; ++s) {
    opt.zero_grad();
    Var<T> y = g.synthesize(w);
    Var<T> loss = lm.total(xc, y);
    double lv = static_cast<double>(loss.value()[0]);
    if (lv < best_loss) {
      best_loss = lv;
      best = w.value();
    }
    if (l2_trace) l2_trace->push_back(lm.l2_value(x, y.value()));
    backward(loss);
    opt.step();
  }
  Var<T> y_final = g.synthesize(w);
  double final_loss = static_cast<double>(lm.total(xc, y_final).value()[0]);
  if (final_loss < best_loss) best = w.value();
  return best;
}

// Per-image fine-tuning baseline: gradient descent on a copy of the
// generator's weights with the latent held fixed. Returns the tuned copy.
template <class T>
Generator<T> finetune_generator(const Tensor<T>& x, const Generator<T>& g, const Tensor<T>& w_init,
                                int64_t steps, double lr) {
  check_config(steps >= 0, "steps must be >= 0");
  Generator<T> tuned = g.clone();
  if (steps == 0) return tuned;
  Optimizer<T> opt(tuned.params().all(), [&] {
    OptimConfig oc;
    oc.kind = "adam";
    oc.lr = lr;
    return oc;
  }());
  LossModel<T> lm;
  Var<T> xc = Var<T>::constant(x);
  Var<T> wc = Var<T>::constant(w_init);
  std::vector<Tensor<T>> best;
  double best_loss = std::numeric_limits<double>::infinity();
  auto snapshot = [&] {
    best.clear();
    for (const auto& name : tuned.params().names()) best.push_back(tuned.params().get(name).value());
  };
  for (int64_t s = 0; s < steps; ++s) {
    opt.zero_grad();
    Var<T> y = tuned.synthesize(wc);
    Var<T> loss = lm.total(xc, y);
    double lv = static_cast<double>(loss.value()[0]);
    if (lv < best_loss) {
      best_loss = lv;
      snapshot();
    }
    backward(loss);
    opt.step();
  }
  {
    detail::InferenceGuard<T> gt(tuned);
    Var<T> y = tuned.synthesize(wc);
    double lv = static_cast<double>(lm.total(xc, y).value()[0]);
    if (lv < best_loss) snapshot();
  }
  const auto& names = tuned.params().names();
  for (size_t i = 0; i < names.size(); ++i) tuned.params().get(names[i]).node()->value = best[i];
  return tuned;
}

}  // namespace hyperinvert
