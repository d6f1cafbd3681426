#pragma once

#include <map>
#include <optional>

#include "hyperinvert/core/nn.hpp"
#include "hyperinvert/core/serialize.hpp"
#include "hyperinvert/genspec.hpp"

namespace hyperinvert {

// Style-based synthesis generator. A mapping MLP turns z into w; each layer
// derives a per-channel style from w, scales its raw kernel by that style
// (and by any supplied per-layer weight offsets, raw kernel first), conv
// layers demodulate, and toRGB outputs accumulate through a skip chain with
// nearest-neighbour upsampling. Final output is tanh-squashed to [-1,1].
template <class T>
class Generator {
 public:
  // Layer index -> offset delta, broadcastable to [N, kh, kw, c_in, c_out].
  using Offsets = std::map<int, Var<T>>;

  Generator(GeneratorSpec spec, uint64_t seed) : spec_(std::move(spec)) {
    spec_.validate();
    levels_ = spec_.levels();
    Rng rng(Rng::derive(seed, 0x67656eULL));
    build_params(rng);
  }

  const GeneratorSpec& spec() const { return spec_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }
  int64_t latent_dim() const { return spec_.latent_dim; }

  static std::string weight_name(int index) { return "layer" + std::to_string(index) + ".weight"; }
  static std::string bias_name(int index) { return "layer" + std::to_string(index) + ".bias"; }
  static std::string style_weight_name(int index) {
    return "layer" + std::to_string(index) + ".style.weight";
  }
  static std::string style_bias_name(int index) {
    return "layer" + std::to_string(index) + ".style.bias";
  }

  Var<T>& layer_weight(int index) { return params_.get(weight_name(index)); }

  Tensor<T> sample_latents(int64_t n, Rng& rng) const {
    Tensor<T> z(Shape{n, spec_.latent_dim});
    rng.fill_normal(z);
    return z;
  }

  // z [N, latent] -> w [N, latent]. z is normalized to the unit hypersphere
  // scale before the MLP.
  Var<T> map_latent(const Var<T>& z) {
    check_shape(z.shape().size() == 2 && z.shape()[1] == spec_.latent_dim,
                "map_latent: z must be [N," + std::to_string(spec_.latent_dim) + "], got " +
                    shape_str(z.shape()));
    Var<T> ms = mul_scalar(sum_axes(mul(z, z), {1}, true), T(1) / static_cast<T>(spec_.latent_dim));
    Var<T> h = mul(z, rsqrt(ms, T(1e-8)));
    h = leaky_relu(linear(h, params_.get("mapping.fc1.weight"), params_.get("mapping.fc1.bias")),
                   T(0.2));
    h = leaky_relu(linear(h, params_.get("mapping.fc2.weight"), params_.get("mapping.fc2.bias")),
                   T(0.2));
    return h;
  }

  // w [N, latent] -> image [N, R, R, 3] in [-1, 1].
  Var<T> synthesize(const Var<T>& w, const Offsets* offsets = nullptr) {
    check_shape(w.shape().size() == 2 && w.shape()[1] == spec_.latent_dim,
                "synthesize: w must be [N," + std::to_string(spec_.latent_dim) + "], got " +
                    shape_str(w.shape()));
    int64_t N = w.shape()[0];
    if (offsets) validate_offsets(*offsets, N);
    int64_t c0 = spec_.layers.front().c_in;
    Var<T> x = add(reshape(params_.get("synthesis.const"), Shape{1, 4, 4, c0}),
                   Var<T>::constant(Tensor<T>::zeros(Shape{N, 1, 1, 1})));
    Var<T> rgb;
    for (size_t lv = 0; lv < levels_.size(); ++lv) {
      bool first_conv = true;
      for (int idx : levels_[lv]) {
        const LayerSpec& l = spec_.layer(idx);
        const Var<T>* delta = nullptr;
        if (offsets) {
          auto it = offsets->find(idx);
          if (it != offsets->end()) delta = &it->second;
        }
        if (l.kind == LayerKind::Conv) {
          if (first_conv && lv > 0) x = upsample2x_nearest(x);
          first_conv = false;
          x = leaky_relu(styled_conv(x, l, w, delta, /*demodulate=*/true), T(0.2));
        } else {
          Var<T> t = styled_conv(x, l, w, delta, /*demodulate=*/false);
          rgb = lv == 0 ? t : add(upsample2x_nearest(rgb), t);
        }
      }
    }
    return tanh_op(rgb);
  }

  // Inference convenience: no gradients, z values in, image values out.
  Tensor<T> generate(const Tensor<T>& z, const Offsets* offsets = nullptr) {
    Var<T> w = map_latent(Var<T>::constant(z));
    bool rg = params_requires_grad_;
    set_params_requires_grad(false);
    Var<T> img = synthesize(Var<T>::constant(w.value()), offsets);
    set_params_requires_grad(rg);
    return img.value();
  }

  void set_params_requires_grad(bool rg) {
    params_.set_requires_grad(rg);
    params_requires_grad_ = rg;
  }

  // Fresh generator with the same spec and copied parameter values.
  Generator clone() const {
    Generator g(spec_, 0);
    g.params_.copy_values_from(params_);
    return g;
  }

 private:
  void build_params(Rng& rng) {
    int64_t d = spec_.latent_dim;
    params_.add("mapping.fc1.weight", normal_init<T>(Shape{d, d}, 1.0 / std::sqrt(double(d)), rng));
    params_.add("mapping.fc1.bias", Tensor<T>::zeros(Shape{d}));
    params_.add("mapping.fc2.weight", normal_init<T>(Shape{d, d}, 1.0 / std::sqrt(double(d)), rng));
    params_.add("mapping.fc2.bias", Tensor<T>::zeros(Shape{d}));
    int64_t c0 = spec_.layers.front().c_in;
    params_.add("synthesis.const", normal_init<T>(Shape{4, 4, c0}, 1.0, rng));
    for (const auto& l : spec_.layers) {
      params_.add(weight_name(l.index),
                  normal_init<T>(Shape{l.kernel, l.kernel, l.c_in, l.c_out},
                                 1.0 / std::sqrt(double(l.kernel * l.kernel * l.c_in)), rng));
      params_.add(bias_name(l.index), Tensor<T>::zeros(Shape{l.c_out}));
      params_.add(style_weight_name(l.index),
                  normal_init<T>(Shape{d, l.c_in}, 1.0 / std::sqrt(double(d)), rng));
      params_.add(style_bias_name(l.index), Tensor<T>::full(Shape{l.c_in}, T(1)));
    }
  }

  void validate_offsets(const Offsets& offsets, int64_t N) const {
    for (const auto& [idx, delta] : offsets) {
      check_config(idx >= 1 && idx <= static_cast<int>(spec_.layers.size()),
                   "offset for unknown layer index " + std::to_string(idx));
      const LayerSpec& l = spec_.layer(idx);
      const Shape& ds = delta.shape();
      check_shape(ds.size() == 5, "offset for " + l.name + " must be rank 5, got " +
                                      shape_str(ds));
      check_shape(ds[0] == N || ds[0] == 1,
                  "offset batch for " + l.name + " must be 1 or " + std::to_string(N));
      check_shape((ds[1] == 1 || ds[1] == l.kernel) && (ds[2] == 1 || ds[2] == l.kernel),
                  "offset spatial dims for " + l.name + " must be 1 or " +
                      std::to_string(l.kernel));
      check_shape(ds[3] == l.c_in && ds[4] == l.c_out,
                  "offset channels for " + l.name + " must be [" + std::to_string(l.c_in) + "," +
                      std::to_string(l.c_out) + "], got " + shape_str(ds));
    }
  }

  Var<T> styled_conv(const Var<T>& x, const LayerSpec& l, const Var<T>& w, const Var<T>* delta,
                     bool demodulate) {
    int64_t N = x.shape()[0];
    Var<T> kernel =
        reshape(params_.get(weight_name(l.index)), Shape{1, l.kernel, l.kernel, l.c_in, l.c_out});
    if (delta) kernel = mul(kernel, add_scalar(*delta, T(1)));
    Var<T> s = linear(w, params_.get(style_weight_name(l.index)),
                      params_.get(style_bias_name(l.index)));
    kernel = mul(kernel, reshape(s, Shape{N, 1, 1, l.c_in, 1}));
    if (demodulate) {
      Var<T> ss = sum_axes(mul(kernel, kernel), {1, 2, 3}, true);
      kernel = mul(kernel, rsqrt(ss, T(1e-8)));
    }
    Var<T> y = conv2d(x, kernel, 1, l.kernel == 3 ? 1 : 0);
    return add(y, params_.get(bias_name(l.index)));
  }

  GeneratorSpec spec_;
  std::vector<std::vector<int>> levels_;
  ParamStore<T> params_;
  bool params_requires_grad_ = true;
};

template <class T>
void save_generator(const std::filesystem::path& dir, const Generator<T>& g) {
  std::filesystem::create_directories(dir);
  save_json(dir / "spec.json", spec_to_json(g.spec()));
  save_param_store(dir, g.params());
}

template <class T>
Generator<T> load_generator(const std::filesystem::path& dir) {
  GeneratorSpec spec = spec_from_json(load_json(dir / "spec.json"));
  Generator<T> g(std::move(spec), 0);
  load_param_store(dir, g.params());
  return g;
}

}  // namespace hyperinvert
