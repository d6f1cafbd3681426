#pragma once

#include <chrono>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "hyperinvert/core/optim.hpp"
#include "hyperinvert/encoder.hpp"
#include "hyperinvert/generator.hpp"
#include "hyperinvert/hypernet.hpp"
#include "hyperinvert/losses.hpp"
#include "hyperinvert/modulation.hpp"

namespace hyperinvert {

template <class T>
struct TrainConfig {
  int64_t steps = 1000;
  int64_t batch_size = 8;
  int64_t refinement_steps = 5;
  double learning_rate = 1e-4;
  std::string optimizer = "ranger";
  bool truncate_unroll = false;
  bool average_step_losses = true;
  uint64_t seed = 0;
  LossConfig<T> loss;

  void validate() const {
    check_config(steps >= 1, "steps must be >= 1");
    check_config(batch_size >= 1, "batch_size must be >= 1");
    check_config(refinement_steps >= 1, "refinement_steps must be >= 1");
    check_config(learning_rate > 0, "learning_rate must be positive");
    check_config(optimizer == "ranger" || optimizer == "adam" || optimizer == "radam",
                 "optimizer must be one of ranger, adam, radam");
  }
};

template <class T>
nlohmann::json train_config_to_json(const TrainConfig<T>& c) {
  return {{"steps", c.steps},
          {"batch_size", c.batch_size},
          {"refinement_steps", c.refinement_steps},
          {"learning_rate", c.learning_rate},
          {"optimizer", c.optimizer},
          {"truncate_unroll", c.truncate_unroll},
          {"average_step_losses", c.average_step_losses},
          {"seed", c.seed},
          {"loss", loss_config_to_json(c.loss)}};
}

template <class T>
TrainConfig<T> train_config_from_json(const nlohmann::json& j) {
  TrainConfig<T> c;
  try {
    if (j.contains("steps")) c.steps = j.at("steps").get<int64_t>();
    if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<int64_t>();
    if (j.contains("refinement_steps"))
      c.refinement_steps = j.at("refinement_steps").get<int64_t>();
    if (j.contains("learning_rate")) c.learning_rate = j.at("learning_rate").get<double>();
    if (j.contains("optimizer")) c.optimizer = j.at("optimizer").get<std::string>();
    if (j.contains("truncate_unroll")) c.truncate_unroll = j.at("truncate_unroll").get<bool>();
    if (j.contains("average_step_losses"))
      c.average_step_losses = j.at("average_step_losses").get<bool>();
    if (j.contains("seed")) c.seed = j.at("seed").get<uint64_t>();
    if (j.contains("loss")) c.loss = loss_config_from_json<T>(j.at("loss"));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed train config: ") + e.what());
  }
  c.validate();
  return c;
}

template <class T>
OptimConfig optim_config_for(const TrainConfig<T>& c) {
  OptimConfig oc;
  oc.kind = c.optimizer;
  oc.lr = c.learning_rate;
  return oc;
}

struct StepRecord {
  int64_t step = 0;
  std::vector<LossTerms> refine_losses;
  double wall_seconds = 0;
};

struct TrainLog {
  std::vector<StepRecord> steps;
  std::map<std::string, std::string> checkpoints;

  double final_total() const {
    if (steps.empty()) return 0;
    const auto& rl = steps.back().refine_losses;
    return rl.empty() ? 0 : rl.back().total;
  }
};

inline nlohmann::json step_record_to_json(const StepRecord& r) {
  nlohmann::json losses = nlohmann::json::array();
  for (const auto& t : r.refine_losses)
    losses.push_back({{"l2", t.l2},
                      {"perceptual", t.perceptual},
                      {"similarity", t.similarity},
                      {"total", t.total}});
  return {{"step", r.step}, {"losses", losses}, {"wall_seconds", r.wall_seconds}};
}

inline void append_train_log_jsonl(const std::filesystem::path& path, const TrainLog& log) {
  std::ofstream f(path, std::ios::app);
  check_config(f.good(), "cannot open log file " + path.string());
  for (const auto& r : log.steps) f << step_record_to_json(r).dump() << "\n";
}

// ---------------------------------------------------------------------------
// Dataset: images sampled from a frozen generator, so every target has an
// exact preimage and no external data is needed.
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> make_dataset(Generator<T>& g, int64_t n, uint64_t seed, int64_t chunk = 32) {
  check_config(n >= 1, "dataset size must be >= 1");
  Rng rng(Rng::derive(seed, 0x64617461ULL));
  int64_t res = g.spec().output_resolution();
  Tensor<T> out(Shape{n, res, res, 3});
  for (int64_t start = 0; start < n; start += chunk) {
    int64_t b = std::min(chunk, n - start);
    Tensor<T> z = g.sample_latents(b, rng);
    Tensor<T> imgs = g.generate(z);
    std::copy(imgs.data(), imgs.data() + imgs.size(), out.data() + start * res * res * 3);
  }
  return out;
}

template <class T>
Tensor<T> slice_rows(const Tensor<T>& data, const std::vector<int64_t>& idx) {
  check_shape(!data.shape().empty(), "dataset must have a leading sample axis");
  int64_t row = data.size() / data.shape()[0];
  Shape s = data.shape();
  s[0] = static_cast<int64_t>(idx.size());
  Tensor<T> out(s);
  for (size_t i = 0; i < idx.size(); ++i) {
    check_shape(idx[i] >= 0 && idx[i] < data.shape()[0], "sample index out of range");
    std::copy(data.data() + idx[i] * row, data.data() + (idx[i] + 1) * row,
              out.data() + static_cast<int64_t>(i) * row);
  }
  return out;
}

namespace detail {

inline std::vector<int64_t> sample_batch(Rng& rng, int64_t n, int64_t batch) {
  std::vector<int64_t> idx(static_cast<size_t>(batch));
  for (auto& i : idx) i = rng.uniform_int(0, n - 1);
  return idx;
}

class FreezeGuard {
 public:
  template <class M>
  explicit FreezeGuard(M& model) {
    model.params().set_requires_grad(false);
    restore_ = [&model] { model.params().set_requires_grad(true); };
  }
  ~FreezeGuard() { restore_(); }
  FreezeGuard(const FreezeGuard&) = delete;
  FreezeGuard& operator=(const FreezeGuard&) = delete;

 private:
  std::function<void()> restore_;
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Encoder pretraining: the generator stays frozen, the encoder learns to map
// images to latents whose synthesis matches the input.
// ---------------------------------------------------------------------------

template <class T>
TrainLog pretrain_encoder(const Tensor<T>& data, Generator<T>& g, LatentEncoder<T>& enc,
                          const TrainConfig<T>& cfg) {
  cfg.validate();
  check_config(data.shape()[0] >= 1, "empty dataset");
  detail::FreezeGuard freeze_g(g);
  Rng rng(Rng::derive(cfg.seed, 0x656e6374ULL));
  Optimizer<T> opt(enc.params().all(), optim_config_for(cfg));
  LossModel<T> loss_model(cfg.loss);
  TrainLog log;
  for (int64_t step = 1; step <= cfg.steps; ++step) {
    auto t0 = std::chrono::steady_clock::now();
    Tensor<T> batch = slice_rows(data, detail::sample_batch(rng, data.shape()[0], cfg.batch_size));
    Var<T> x = Var<T>::constant(std::move(batch));
    opt.zero_grad();
    Var<T> w = enc.encode(x);
    Var<T> y = g.synthesize(w);
    LossTerms terms;
    Var<T> loss = loss_model.total(x, y, &terms);
    backward(loss);
    opt.step();
    StepRecord rec;
    rec.step = step;
    rec.refine_losses.push_back(terms);
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log.steps.push_back(std::move(rec));
  }
  return log;
}

// Mean pixel L2 of encoder reconstructions over a dataset, for baselining.
template <class T>
double mean_encoder_l2(const Tensor<T>& data, Generator<T>& g, LatentEncoder<T>& enc,
                       int64_t chunk = 32) {
  double total = 0;
  int64_t n = data.shape()[0];
  LossModel<T> lm;
  for (int64_t start = 0; start < n; start += chunk) {
    std::vector<int64_t> idx;
    for (int64_t i = start; i < std::min(start + chunk, n); ++i) idx.push_back(i);
    Tensor<T> x = slice_rows(data, idx);
    Tensor<T> w = enc.encode(Var<T>::constant(x)).value();
    Tensor<T> y = g.synthesize(Var<T>::constant(w)).value();
    total += lm.l2_value(x, y) * static_cast<double>(idx.size());
  }
  return total / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Hypernetwork training: T-step unrolled refinement against a frozen
// generator and encoder. Only hypernetwork parameters receive updates.
// ---------------------------------------------------------------------------

template <class T>
TrainLog train_hypernetwork(const Tensor<T>& data, Generator<T>& g, LatentEncoder<T>& enc,
                            HyperNet<T>& h, const TrainConfig<T>& cfg) {
  cfg.validate();
  check_config(data.shape()[0] >= 1, "empty dataset");
  check_config(h.generator_spec().name == g.spec().name &&
                   h.generator_spec().layers.size() == g.spec().layers.size(),
               "hypernetwork was built for a different generator spec");
  detail::FreezeGuard freeze_g(g);
  detail::FreezeGuard freeze_e(enc);
  Rng rng(Rng::derive(cfg.seed, 0x68797074ULL));
  Optimizer<T> opt(h.params().all(), optim_config_for(cfg));
  LossModel<T> loss_model(cfg.loss);
  TrainLog log;
  for (int64_t step = 1; step <= cfg.steps; ++step) {
    auto t0 = std::chrono::steady_clock::now();
    Tensor<T> batch = slice_rows(data, detail::sample_batch(rng, data.shape()[0], cfg.batch_size));
    Var<T> x = Var<T>::constant(std::move(batch));
    opt.zero_grad();
    Var<T> w = enc.encode(x);
    Var<T> y = g.synthesize(w);
    StepRecord rec;
    rec.step = step;
    typename Generator<T>::Offsets acc;
    std::vector<Var<T>> step_losses;
    for (int64_t t = 1; t <= cfg.refinement_steps; ++t) {
      Var<T> current = cfg.truncate_unroll ? Var<T>::constant(y.value()) : y;
      OffsetMap<T> delta = h.predict_offsets(x, current);
      if (acc.empty()) {
        acc = std::move(delta);
      } else {
        OffsetMap<T> prior =
            cfg.truncate_unroll ? offsets_as_constants(materialize_offsets(acc)) : acc;
        acc = accumulate_offsets<T>({prior, delta});
      }
      y = g.synthesize(w, &acc);
      LossTerms terms;
      step_losses.push_back(loss_model.total(x, y, &terms));
      rec.refine_losses.push_back(terms);
    }
    Var<T> total = step_losses[0];
    for (size_t i = 1; i < step_losses.size(); ++i) total = add(total, step_losses[i]);
    if (cfg.average_step_losses)
      total = mul_scalar(total, T(1) / static_cast<T>(cfg.refinement_steps));
    backward(total);
    opt.step();
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log.steps.push_back(std::move(rec));
  }
  return log;
}

}  // namespace hyperinvert
