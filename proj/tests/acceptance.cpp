// Acceptance gate: eight checks, one pass/fail line each. Exit code is the
// number of failed checks.
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "hyperinvert/hyperinvert.hpp"

using namespace hyperinvert;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

double secs(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int g_failures = 0;

void report(int idx, bool ok, const std::string& detail) {
  std::printf("criterion %d %s: %s\n", idx, ok ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  if (!ok) ++g_failures;
}

void run_criterion(int idx, const std::function<std::pair<bool, std::string>()>& fn) {
  try {
    auto [ok, detail] = fn();
    report(idx, ok, detail);
  } catch (const std::exception& e) {
    report(idx, false, std::string("exception: ") + e.what());
  }
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof(buf), f, ap);
  va_end(ap);
  return buf;
}

// Student-t upper tail via the regularized incomplete beta function.
double betacf(double a, double b, double x) {
  const int kMaxIter = 200;
  const double kEps = 3e-14, kFpmin = 1e-300;
  double qab = a + b, qap = a + 1, qam = a - 1;
  double c = 1, d = 1 - qab * x / qap;
  if (std::fabs(d) < kFpmin) d = kFpmin;
  d = 1 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1 + aa * d;
    if (std::fabs(d) < kFpmin) d = kFpmin;
    c = 1 + aa / c;
    if (std::fabs(c) < kFpmin) c = kFpmin;
    d = 1 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1 + aa * d;
    if (std::fabs(d) < kFpmin) d = kFpmin;
    c = 1 + aa / c;
    if (std::fabs(c) < kFpmin) c = kFpmin;
    d = 1 / d;
    double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) break;
  }
  return h;
}

double ibeta(double a, double b, double x) {
  if (x <= 0) return 0;
  if (x >= 1) return 1;
  double bt = std::exp(std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) +
                       b * std::log1p(-x));
  if (x < (a + 1) / (a + b + 2)) return bt * betacf(a, b, x) / a;
  return 1 - bt * betacf(b, a, 1 - x) / b;
}

double t_upper_tail(double t, double nu) {
  double p = 0.5 * ibeta(nu / 2, 0.5, nu / (nu + t * t));
  return t > 0 ? p : 1 - p;
}

// ---------------------------------------------------------------------------
// 1. Parameter accounting on the built-in full-scale generator spec.
// ---------------------------------------------------------------------------

std::pair<bool, std::string> criterion1() {
  auto t0 = Clock::now();
  GeneratorSpec full = full_stylegan2_spec();
  HyperNetConfig final_cfg;  // shared_mix heads over medium+fine convs
  ParamReport rep = count_hypernet_params(full, final_cfg);

  const double kTarget = 332e6, kTol = 0.10;
  bool within = std::fabs(double(rep.total) - kTarget) <= kTol * kTarget;

  HyperNetConfig nc = final_cfg, pc = final_cfg;
  nc.variant = HeadVariant::Naive;
  pc.variant = HeadVariant::PerChannel;
  bool nine_x = true;
  ParamReport rn = count_hypernet_params(full, nc);
  ParamReport rp = count_hypernet_params(full, pc);
  for (size_t i = 0; i < rn.heads.size(); ++i) {
    const LayerSpec& l = full.layers[static_cast<size_t>(rn.heads[i].layer_index - 1)];
    if (l.kernel == 3) nine_x = nine_x && rn.heads[i].fc == 9 * rp.heads[i].fc;
  }

  bool ordered = true;
  for (const GeneratorSpec& s : {full, toy_spec(8, 8), toy_spec(16, 16), toy_spec(32, 8)}) {
    int64_t n = count_hypernet_params(s, nc).total;
    int64_t p = count_hypernet_params(s, pc).total;
    int64_t m = count_hypernet_params(s, final_cfg).total;
    ordered = ordered && n >= p && p >= m;
  }
  double wall = secs(t0);
  bool ok = within && nine_x && ordered && wall < 1.0;
  return {ok, fmt("total=%lld (target 332M +/-10%%: %s), 9x fc rule %s, ordering %s, %.3fs",
                  static_cast<long long>(rep.total), within ? "yes" : "no",
                  nine_x ? "holds" : "violated", ordered ? "holds" : "violated", wall)};
}

// ---------------------------------------------------------------------------
// 2. Offset application and accumulation against nested-loop oracles.
// ---------------------------------------------------------------------------

Tensor<double> modulate_oracle(const Tensor<double>& theta, const Tensor<double>& delta) {
  const Shape& ts = theta.shape();
  Tensor<double> out(ts);
  const Shape& ds = delta.shape();
  for (int64_t a = 0; a < ts[0]; ++a)
    for (int64_t b = 0; b < ts[1]; ++b)
      for (int64_t i = 0; i < ts[2]; ++i)
        for (int64_t o = 0; o < ts[3]; ++o) {
          int64_t da = ds[0] == 1 ? 0 : a, db = ds[1] == 1 ? 0 : b;
          int64_t di = ds[2] == 1 ? 0 : i, dn = ds[3] == 1 ? 0 : o;
          double d = delta.data()[((da * ds[1] + db) * ds[2] + di) * ds[3] + dn];
          out.data()[((a * ts[1] + b) * ts[2] + i) * ts[3] + o] =
              theta.data()[((a * ts[1] + b) * ts[2] + i) * ts[3] + o] * (1.0 + d);
        }
  return out;
}

std::pair<bool, std::string> criterion2() {
  auto t0 = Clock::now();
  const double kTol = 1e-6;
  Rng rng(0xacc2);
  double max_err = 0;
  int trials = 120;
  for (int t = 0; t < trials; ++t) {
    int64_t k = rng.uniform_int(0, 1) ? 3 : 1;
    int64_t I = rng.uniform_int(1, 8), O = rng.uniform_int(1, 8);
    Tensor<double> theta(Shape{k, k, I, O});
    rng.fill_normal(theta);
    bool broadcast = rng.uniform_int(0, 1) == 0;
    Tensor<double> delta(broadcast ? Shape{1, 1, I, O} : Shape{k, k, I, O});
    rng.fill_normal(delta, 0.0, 0.3);

    Tensor<double> got = modulate_weights(theta, delta);
    max_err = std::max(max_err, max_abs_diff(got, modulate_oracle(theta, delta)));

    // Zero offsets must reproduce the kernel exactly.
    Tensor<double> zero(delta.shape());
    Tensor<double> ident = modulate_weights(theta, zero);
    for (int64_t i = 0; i < theta.size(); ++i)
      if (ident.data()[i] != theta.data()[i]) return {false, "zero-offset identity not exact"};

    // Accumulated offsets sum per layer across steps.
    Tensor<double> d2(delta.shape());
    rng.fill_normal(d2, 0.0, 0.3);
    OffsetTensors<double> s1{{1, delta}}, s2{{1, d2}};
    Tensor<double> acc = accumulate_offset_tensors<double>({s1, s2}).at(1);
    Tensor<double> sum = tensor_add(delta, d2);
    max_err = std::max(max_err, max_abs_diff(acc, sum));

    // Sequential application composes multiplicatively and must NOT equal the
    // accumulated sum form: theta(1+a)(1+b) vs theta(1+a+b) differ by theta*a*b.
    Tensor<double> composed = modulate_weights(modulate_weights(theta, delta), d2);
    Tensor<double> accumulated = modulate_weights(theta, sum);
    double comp_err = max_abs_diff(composed, modulate_oracle(modulate_oracle(theta, delta), d2));
    max_err = std::max(max_err, comp_err);
    if (max_abs_diff(composed, accumulated) < 1e-9)
      return {false, "composed and accumulated application are indistinguishable"};
  }
  double wall = secs(t0);
  bool ok = max_err < kTol && wall < 10.0;
  return {ok, fmt("%d tensors, max |err| %.2e (< 1e-6), identity exact, "
                  "composed!=accumulated, %.2fs",
                  trials, max_err, wall)};
}

// ---------------------------------------------------------------------------
// 3. Finite-difference audit of gradients through synthesize + offsets.
// ---------------------------------------------------------------------------

std::pair<bool, std::string> criterion3() {
  auto t0 = Clock::now();
  const double kH = 1e-4, kRelTol = 1e-3;
  GeneratorSpec spec = toy_spec(8, 8);
  Generator<double> g(spec, 21);
  Rng rng(22);
  Tensor<double> w = g.sample_latents(2, rng);
  Tensor<double> x = g.generate(g.sample_latents(2, rng));
  Var<double> xv = Var<double>::constant(x);
  LossModel<double> lm;

  // Offsets as free parameters on every refined layer.
  std::vector<int> refined = select_refined_layers(spec, RefinementPolicy::MediumFineConv);
  OffsetMap<double> offs;
  for (int idx : refined) {
    const LayerSpec& l = spec.layers[static_cast<size_t>(idx - 1)];
    Tensor<double> d(Shape{1, l.kernel, l.kernel, l.c_in, l.c_out});
    rng.fill_normal(d, 0.0, 0.05);
    offs.emplace(idx, Var<double>::param(d));
  }
  auto loss_of_offsets = [&]() {
    OffsetMap<double> frozen;
    for (auto& [i, v] : offs) frozen.emplace(i, Var<double>::constant(v.value()));
    return lm.total(xv, g.synthesize(Var<double>::constant(w), &frozen)).value()[0];
  };
  Var<double> loss = lm.total(xv, g.synthesize(Var<double>::constant(w), &offs));
  backward(loss);

  double worst = 0;
  int checked = 0;
  Rng pick(23);
  for (auto& [idx, v] : offs) {
    for (int s = 0; s < 3; ++s) {
      int64_t c = pick.uniform_int(0, v.value().size() - 1);
      double keep = v.value()[c];
      v.node()->value[c] = keep + kH;
      double up = loss_of_offsets();
      v.node()->value[c] = keep - kH;
      double dn = loss_of_offsets();
      v.node()->value[c] = keep;
      double fd = (up - dn) / (2 * kH);
      double an = v.grad()[c];
      double rel = std::fabs(fd - an) / std::max({std::fabs(fd), std::fabs(an), 1e-10});
      worst = std::max(worst, rel);
      ++checked;
    }
  }
  double worst_delta = worst;

  // Head parameters: perturb, re-run predict + synthesize + loss.
  HyperNetConfig hc;
  hc.variant = HeadVariant::PerChannel;
  hc.backbone_width = 32;
  hc.shared_fc_dim = 16;
  HyperNet<double> h(spec, hc, 24);
  for (const auto& name : h.params().names()) {
    if (name.find("fc.weight") != std::string::npos) {
      Tensor<double> t(h.params().get(name).shape());
      Rng r2(Rng::derive(25, std::hash<std::string>{}(name)));
      r2.fill_normal(t, 0.0, 0.05);
      h.params().get(name).node()->value = std::move(t);
    }
  }
  Var<double> recon0 = Var<double>::constant(g.synthesize(Var<double>::constant(w)).value());
  auto head_loss = [&]() {
    OffsetMap<double> om = h.predict_offsets(xv, recon0);
    OffsetMap<double> frozen;
    for (auto& [i, v] : om) frozen.emplace(i, Var<double>::constant(v.value()));
    return lm.total(xv, g.synthesize(Var<double>::constant(w), &frozen)).value()[0];
  };
  h.params().zero_grads();
  OffsetMap<double> om = h.predict_offsets(xv, recon0);
  Var<double> hloss = lm.total(xv, g.synthesize(Var<double>::constant(w), &om));
  backward(hloss);

  worst = 0;
  for (const auto& name : h.params().names()) {
    if (name.find("head") == std::string::npos || name.find("weight") == std::string::npos)
      continue;
    Var<double>& v = h.params().get(name);
    for (int s = 0; s < 2; ++s) {
      int64_t c = pick.uniform_int(0, v.value().size() - 1);
      double keep = v.value()[c];
      v.node()->value[c] = keep + kH;
      double up = head_loss();
      v.node()->value[c] = keep - kH;
      double dn = head_loss();
      v.node()->value[c] = keep;
      double fd = (up - dn) / (2 * kH);
      double an = v.grad()[c];
      double rel = std::fabs(fd - an) / std::max({std::fabs(fd), std::fabs(an), 1e-10});
      if (std::fabs(fd) < 1e-12 && std::fabs(an) < 1e-12) rel = 0;
      worst = std::max(worst, rel);
      ++checked;
    }
  }
  double wall = secs(t0);
  bool ok = worst_delta < kRelTol && worst < kRelTol && wall < 60.0;
  return {ok, fmt("%d coords, max rel err: offsets %.2e, head params %.2e (< 1e-3), %.1fs",
                  checked, worst_delta, worst, wall)};
}

// ---------------------------------------------------------------------------
// 4. Separable heads emit rank-1 spatial slices.
// ---------------------------------------------------------------------------

std::pair<bool, std::string> criterion4() {
  GeneratorSpec spec = toy_spec(8, 8);
  HyperNetConfig hc;
  hc.variant = HeadVariant::Separable;
  hc.backbone_width = 32;
  hc.shared_fc_dim = 16;
  HyperNet<double> h(spec, hc, 31);
  // Zero-initialized heads emit zero offsets; randomize them so the rank
  // structure is exercised on nonzero values.
  Rng wr(32);
  for (const auto& name : h.params().names()) {
    if (name.find("head") != std::string::npos) {
      Tensor<double> t(h.params().get(name).shape());
      wr.fill_normal(t, 0.0, 0.2);
      h.params().get(name).node()->value = std::move(t);
    }
  }
  Generator<double> g(spec, 33);
  Rng rng(34);
  const int64_t kInputs = 50;
  Tensor<double> x = g.generate(g.sample_latents(kInputs, rng));
  Var<double> xv = Var<double>::constant(x);
  OffsetMap<double> offs = h.predict_offsets(xv, xv);

  const double kTol = 1e-5;
  double worst = 0;
  int64_t slices = 0;
  for (auto& [idx, v] : offs) {
    const Shape& s = v.shape();  // [N, kh, kw, I, O]
    int64_t N = s[0], kh = s[1], kw = s[2], I = s[3], O = s[4];
    for (int64_t n = 0; n < N; ++n)
      for (int64_t a = 0; a < kh; ++a)
        for (int64_t b = 0; b < kw; ++b) {
          std::vector<double> gram(static_cast<size_t>(O * O), 0.0);
          const double* m = v.value().data() + (((n * kh + a) * kw + b) * I) * O;
          for (int64_t o1 = 0; o1 < O; ++o1)
            for (int64_t o2 = 0; o2 < O; ++o2) {
              double acc = 0;
              for (int64_t i = 0; i < I; ++i) acc += m[i * O + o1] * m[i * O + o2];
              gram[static_cast<size_t>(o1 * O + o2)] = acc;
            }
          std::vector<std::vector<double>> vecs;
          std::vector<double> vals;
          detail::top_eigenpairs(gram, O, 2, vecs, vals);
          if (vals[0] <= 0) return {false, "degenerate offset slice"};
          double ratio = std::sqrt(std::max(vals[1], 0.0) / vals[0]);
          worst = std::max(worst, ratio);
          ++slices;
        }
  }
  bool ok = worst < kTol;
  return {ok, fmt("%lld spatial slices over %lld inputs, max sigma2/sigma1 %.2e (< 1e-5)",
                  static_cast<long long>(slices), static_cast<long long>(kInputs), worst)};
}

// ---------------------------------------------------------------------------
// Shared trained fixture for criteria 5-7.
// ---------------------------------------------------------------------------

struct Fixture {
  GeneratorSpec spec = toy_spec(8, 8);
  Generator<float> g{spec, 5};
  LatentEncoder<float> enc{spec, 64, 6};
  HyperNetConfig hc;
  HyperNet<float> h;
  Tensor<float> train, test;
  double train_wall = 0;
  bool frozen_ok = false, zero_init_ok = false;
  std::string frozen_detail;

  static HyperNetConfig make_cfg() {
    HyperNetConfig c;
    c.backbone_width = 64;
    c.shared_fc_dim = 32;
    return c;
  }

  Fixture() : hc(make_cfg()), h(spec, hc, 7) {
    auto t0 = Clock::now();
    Tensor<float> data = make_dataset(g, 2200, 11);
    std::vector<int64_t> tr(2000), te(200);
    for (int64_t i = 0; i < 2000; ++i) tr[static_cast<size_t>(i)] = i;
    for (int64_t i = 0; i < 200; ++i) te[static_cast<size_t>(i)] = 2000 + i;
    train = slice_rows(data, tr);
    test = slice_rows(data, te);

    TrainConfig<float> ec;
    ec.steps = 250;
    ec.batch_size = 8;
    ec.learning_rate = 1e-3;
    ec.optimizer = "adam";
    ec.seed = 3;
    pretrain_encoder(train, g, enc, ec);

    fs::path snap = fs::temp_directory_path() / ("hyperinvert_acc_" + std::to_string(getpid()));
    save_generator(snap / "a" / "gen", g);
    save_encoder(snap / "a" / "enc", enc);

    // Zero-initialized hypernetwork must reproduce the encoder reconstruction.
    {
      HyperNet<float> h0(spec, hc, 99);
      std::vector<int64_t> ten(10);
      for (int64_t i = 0; i < 10; ++i) ten[static_cast<size_t>(i)] = i;
      Tensor<float> x10 = slice_rows(test, ten);
      InversionResult<float> r0 = invert(x10, g, enc, h0, 5);
      Var<float> w0 = enc.encode(Var<float>::constant(x10));
      Tensor<float> base = g.synthesize(Var<float>::constant(w0.value())).value();
      zero_init_ok = r0.reconstruction.size() == base.size();
      for (int64_t i = 0; zero_init_ok && i < base.size(); ++i)
        zero_init_ok = r0.reconstruction.data()[i] == base.data()[i];
    }

    // Coarse phase then a short annealed phase; constant-lr Adam orbits the
    // minimum at lr-scale radius, which costs per-image wins on the margin.
    TrainConfig<float> tc;
    tc.steps = 1600;
    tc.batch_size = 8;
    tc.refinement_steps = 5;
    tc.learning_rate = 1e-3;
    tc.optimizer = "adam";
    tc.seed = 4;
    train_hypernetwork(train, g, enc, h, tc);
    tc.steps = 400;
    tc.learning_rate = 2e-4;
    tc.seed = 5;
    train_hypernetwork(train, g, enc, h, tc);
    train_wall = secs(t0);

    save_generator(snap / "b" / "gen", g);
    save_encoder(snap / "b" / "enc", enc);
    frozen_ok = true;
    int64_t files = 0;
    for (const char* part : {"gen", "enc"}) {
      for (const auto& entry : fs::directory_iterator(snap / "a" / part)) {
        std::ifstream fa(entry.path(), std::ios::binary);
        std::ifstream fb(snap / "b" / part / entry.path().filename(), std::ios::binary);
        std::string ba((std::istreambuf_iterator<char>(fa)), {});
        std::string bb((std::istreambuf_iterator<char>(fb)), {});
        frozen_ok = frozen_ok && !ba.empty() && ba == bb;
        ++files;
      }
    }
    frozen_detail = fmt("%lld checkpoint files byte-compared", static_cast<long long>(files));
    fs::remove_all(snap);
  }
};

std::vector<double> per_image_l2(const Tensor<float>& x, const Tensor<float>& y) {
  int64_t n = x.shape()[0], px = x.size() / n;
  std::vector<double> out(static_cast<size_t>(n), 0.0);
  for (int64_t i = 0; i < n; ++i) {
    double acc = 0;
    for (int64_t j = 0; j < px; ++j) {
      double d = double(x.data()[i * px + j]) - double(y.data()[i * px + j]);
      acc += d * d;
    }
    out[static_cast<size_t>(i)] = acc / double(px);
  }
  return out;
}

std::pair<bool, std::string> criterion5(Fixture& fx) {
  const double kStepTol = 1.05, kPvalue = 0.01, kImproveFrac = 0.90;
  InversionResult<float> r = invert(fx.test, fx.g, fx.enc, fx.h, 5);
  Var<float> wv = fx.enc.encode(Var<float>::constant(fx.test));
  Tensor<float> base = fx.g.synthesize(Var<float>::constant(wv.value())).value();

  std::vector<double> l2_base = per_image_l2(fx.test, base);
  std::vector<double> l2_hyp = per_image_l2(fx.test, r.reconstruction);
  int64_t n = static_cast<int64_t>(l2_base.size());
  int64_t improved = 0;
  double mean_d = 0;
  for (int64_t i = 0; i < n; ++i) {
    double d = l2_base[static_cast<size_t>(i)] - l2_hyp[static_cast<size_t>(i)];
    if (d > 0) ++improved;
    mean_d += d;
  }
  mean_d /= double(n);
  double var_d = 0;
  for (int64_t i = 0; i < n; ++i) {
    double d = l2_base[static_cast<size_t>(i)] - l2_hyp[static_cast<size_t>(i)] - mean_d;
    var_d += d * d;
  }
  var_d /= double(n - 1);
  double t_stat = mean_d / std::sqrt(var_d / double(n));
  double p = t_upper_tail(t_stat, double(n - 1));

  bool monotone = true;
  for (size_t t = 0; t + 1 < r.per_step_distortion.size(); ++t)
    monotone = monotone && r.per_step_distortion[t + 1] <= kStepTol * r.per_step_distortion[t];

  bool ok = improved >= int64_t(std::ceil(kImproveFrac * double(n))) && p < kPvalue && monotone &&
            fx.train_wall < 6 * 3600.0;
  return {ok, fmt("improved %lld/%lld held-out, paired t=%.1f p=%.1e (< 0.01), per-step mean "
                  "distortion %s within 5%%/step, train %.0fs",
                  static_cast<long long>(improved), static_cast<long long>(n), t_stat, p,
                  monotone ? "non-increasing" : "INCREASES", fx.train_wall)};
}

std::pair<bool, std::string> criterion6(Fixture& fx) {
  std::vector<int64_t> ten(10);
  for (int64_t i = 0; i < 10; ++i) ten[static_cast<size_t>(i)] = i;
  Tensor<float> x10 = slice_rows(fx.test, ten);

  auto t0 = Clock::now();
  InversionResult<float> r = invert(x10, fx.g, fx.enc, fx.h, 5);
  double hyper_per_img = secs(t0) / 10.0;
  double hyper_l2 = 0;
  for (double v : per_image_l2(x10, r.reconstruction)) hyper_l2 += v / 10.0;

  t0 = Clock::now();
  double ft_l2 = 0;
  for (int64_t i = 0; i < 10; ++i) {
    Tensor<float> xi = slice_rows(x10, {i});
    Tensor<float> wi = slice_rows(r.w, {i});
    Generator<float> tuned = finetune_generator(xi, fx.g, wi, 200, 2e-3);
    Tensor<float> yi = tuned.synthesize(Var<float>::constant(wi)).value();
    ft_l2 += per_image_l2(xi, yi)[0] / 10.0;
  }
  double ft_per_img = secs(t0) / 10.0;

  bool ok = ft_l2 <= hyper_l2 && ft_per_img >= 10.0 * hyper_per_img;
  return {ok, fmt("10 held-out images: hypernet L2 %.2e @ %.3fs/img, 200-step fine-tune L2 %.2e "
                  "@ %.3fs/img (%.1fx slower)",
                  hyper_l2, hyper_per_img, ft_l2, ft_per_img, ft_per_img / hyper_per_img)};
}

std::pair<bool, std::string> criterion7(Fixture& fx) {
  bool ok = fx.frozen_ok && fx.zero_init_ok;
  return {ok, fmt("generator+encoder %s after training (%s); zero-init hypernet reconstruction "
                  "%s encoder output",
                  fx.frozen_ok ? "byte-identical" : "CHANGED", fx.frozen_detail.c_str(),
                  fx.zero_init_ok ? "bit-equal to" : "DIFFERS from")};
}

// ---------------------------------------------------------------------------
// 8. Offset transfer onto a different generator.
// ---------------------------------------------------------------------------

std::pair<bool, std::string> criterion8() {
  GeneratorSpec spec = toy_spec(8, 8);
  Generator<double> source(spec, 41);
  Generator<double> target(spec, 42);  // independently initialized weights
  Rng rng(43);
  for (const auto& name : target.params().names()) {
    Tensor<double>& t = target.params().get(name).node()->value;
    for (int64_t i = 0; i < t.size(); ++i) t[i] += 0.1 * rng.normal();
  }
  Tensor<double> target_before = target.params().get(target.params().names()[0]).value();

  std::vector<int> refined = select_refined_layers(spec, RefinementPolicy::MediumFineConv);
  OffsetTensors<double> offs, zeros;
  for (int idx : refined) {
    const LayerSpec& l = spec.layers[static_cast<size_t>(idx - 1)];
    Tensor<double> d(Shape{1, 1, 1, l.c_in, l.c_out});
    rng.fill_normal(d, 0.0, 0.2);
    offs.emplace(idx, d);
    zeros.emplace(idx, Tensor<double>(Shape{1, 1, 1, l.c_in, l.c_out}));
  }

  Generator<double> adapted = transfer_offsets(offs, target);
  double max_err = 0;
  for (int idx : refined) {
    std::string wname = "layer" + std::to_string(idx) + ".weight";
    Tensor<double> got = adapted.params().get(wname).value();
    Tensor<double> theta = target.params().get(wname).value();
    const Shape& ts = theta.shape();  // [kh, kw, I, O]
    Tensor<double> d4 = offs.at(idx).reshaped(Shape{1, 1, ts[2], ts[3]});
    max_err = std::max(max_err, max_abs_diff(got, modulate_oracle(theta, d4)));
  }

  Generator<double> same = transfer_offsets(zeros, target);
  bool unchanged = true;
  for (const auto& name : target.params().names()) {
    const Tensor<double>& a = same.params().get(name).value();
    const Tensor<double>& b = target.params().get(name).value();
    for (int64_t i = 0; i < a.size(); ++i) unchanged = unchanged && a.data()[i] == b.data()[i];
  }
  // Source generator is untouched by construction; target must be too.
  const Tensor<double>& after = target.params().get(target.params().names()[0]).value();
  for (int64_t i = 0; i < after.size(); ++i)
    unchanged = unchanged && after.data()[i] == target_before.data()[i];

  bool ok = max_err < 1e-12 && unchanged;
  return {ok, fmt("transfer matches modulation oracle (max |err| %.2e), zero offsets leave "
                  "target %s",
                  max_err, unchanged ? "unchanged" : "CHANGED")};
}

}  // namespace

int main() {
  run_criterion(1, criterion1);
  run_criterion(2, criterion2);
  run_criterion(3, criterion3);
  run_criterion(4, criterion4);
  try {
    Fixture fx;
    run_criterion(5, [&] { return criterion5(fx); });
    run_criterion(6, [&] { return criterion6(fx); });
    run_criterion(7, [&] { return criterion7(fx); });
  } catch (const std::exception& e) {
    report(5, false, std::string("fixture exception: ") + e.what());
    report(6, false, "fixture unavailable");
    report(7, false, "fixture unavailable");
  }
  run_criterion(8, criterion8);
  std::printf("%d/8 criteria passed\n", 8 - g_failures);
  return g_failures;
}
