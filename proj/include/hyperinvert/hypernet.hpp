#pragma once

#include "hyperinvert/core/serialize.hpp"
#include "hyperinvert/modulation.hpp"

namespace hyperinvert {

// Hypernetwork: consumes the target image stacked with the current
// reconstruction (6 channels) and emits one multiplicative weight offset per
// refined generator layer. A ResNet34-pattern backbone (block layout
// [3,4,6,3], stem width/8, group-norm affine pairs after every conv) feeds
// per-layer heads. Head variants:
//   naive       - FC predicts the full kh*kw*I*O kernel offset
//   per_channel - FC predicts one offset per (in,out) channel pair
//   separable   - FC predicts two spatial-channel factors whose product is
//                 the offset
//   shared_mix  - square convs at the generator's widest channel count pass
//                 through a narrow trunk into an output pair shared by all
//                 such heads; other layers fall back to per_channel
// Final output layers start at zero so refinement begins as the identity.
template <class T>
class HyperNet {
 public:
  HyperNet(GeneratorSpec gspec, HyperNetConfig cfg, uint64_t seed)
      : spec_(std::move(gspec)), cfg_(cfg) {
    spec_.validate();
    cfg_.validate();
    refined_ = select_refined_layers(spec_, cfg_.policy);
    cs_ = spec_.max_conv_channels();
    Rng rng(Rng::derive(seed, 0x687970ULL));
    build_backbone(rng);
    bool any_shared = false;
    for (int idx : refined_) {
      if (head_is_shared(idx)) {
        build_shared_trunk(idx, rng);
        any_shared = true;
      } else {
        build_standard_head(idx, rng);
      }
    }
    if (any_shared) build_shared_pair(rng);
  }

  const GeneratorSpec& generator_spec() const { return spec_; }
  const HyperNetConfig& config() const { return cfg_; }
  const std::vector<int>& refined_layers() const { return refined_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }

  bool head_is_shared(int idx) const {
    return cfg_.variant == HeadVariant::SharedMix && shared_head_eligible(spec_, spec_.layer(idx));
  }

  void set_params_requires_grad(bool rg) { params_.set_requires_grad(rg); }

  // x [N,H,W,6] -> feature map [N,h,w,width]. Downsampling points drop to
  // stride 1 once the spatial size falls below 8 so small inputs keep a
  // usable grid; the final stage never strides.
  Var<T> extract_features(const Var<T>& x) {
    check_shape(x.shape().size() == 4 && x.shape()[3] == 6,
                "hypernet input must be [N,H,W,6], got " + shape_str(x.shape()));
    auto ds = [](const Var<T>& v) { return v.shape()[1] >= 8 ? int64_t(2) : int64_t(1); };
    Var<T> h = conv2d(x, params_.get("backbone.stem.weight"), ds(x), 3);
    h = leaky_relu(group_norm(h, params_.get("backbone.stem.gamma"),
                              params_.get("backbone.stem.beta")),
                   T(0.2));
    h = avg_pool2d(h, 3, ds(h), 1);
    const int64_t blocks[4] = {3, 4, 6, 3};
    for (int stage = 0; stage < 4; ++stage) {
      for (int64_t b = 0; b < blocks[stage]; ++b) {
        int64_t stride = 1;
        if (b == 0 && (stage == 1 || stage == 2)) stride = ds(h);
        h = residual_block(h, stage, b, stride);
      }
    }
    return h;
  }

  // Per-layer offsets for a batch. target and current are [N,R,R,3].
  OffsetMap<T> predict_offsets(const Var<T>& target, const Var<T>& current) {
    check_shape(target.shape() == current.shape(),
                "target and current reconstruction shapes differ: " + shape_str(target.shape()) +
                    " vs " + shape_str(current.shape()));
    check_shape(target.shape().size() == 4 && target.shape()[3] == 3,
                "hypernet images must be [N,R,R,3]");
    Var<T> f = extract_features(concat_last(target, current));
    int64_t N = f.shape()[0];
    OffsetMap<T> out;
    for (int idx : refined_) {
      const LayerSpec& l = spec_.layer(idx);
      std::string p = "head" + std::to_string(idx) + ".";
      if (head_is_shared(idx)) {
        Var<T> t = shared_trunk_forward(p, f);  // [N,d]
        Var<T> u = leaky_relu(
            linear(t, params_.get("shared.fc1.weight"), params_.get("shared.fc1.bias")), T(0.2));
        Var<T> r = reshape(u, Shape{N * cs_, cs_});
        Var<T> v = linear(r, params_.get("shared.fc2.weight"), params_.get("shared.fc2.bias"));
        out.emplace(idx, reshape(v, Shape{N, 1, 1, cs_, cs_}));
      } else {
        Var<T> t = standard_trunk_forward(p, f);  // [N,width]
        Var<T> o = linear(t, params_.get(p + "fc.weight"), params_.get(p + "fc.bias"));
        out.emplace(idx, shape_head_output(o, l, N));
      }
    }
    return out;
  }

 private:
  Var<T> shape_head_output(const Var<T>& o, const LayerSpec& l, int64_t N) {
    int64_t k = l.kernel, I = l.c_in, O = l.c_out;
    switch (cfg_.variant) {
      case HeadVariant::Naive:
        return reshape(o, Shape{N, k, k, I, O});
      case HeadVariant::Separable: {
        // First k*k*I outputs form one factor, the rest the other.
        Var<T> a = reshape(slice_last(o, 0, k * k * I), Shape{N, k, k, I, 1});
        Var<T> b = reshape(slice_last(o, k * k * I, k * k * O), Shape{N, k, k, 1, O});
        return mul(a, b);
      }
      case HeadVariant::PerChannel:
      case HeadVariant::SharedMix:
        return reshape(o, Shape{N, 1, 1, I, O});
    }
    throw ConfigError("unreachable head variant");
  }

  Var<T> gap(const Var<T>& t) {
    int64_t hw = t.shape()[1] * t.shape()[2];
    return mul_scalar(sum_axes(t, {1, 2}, false), T(1) / static_cast<T>(hw));
  }

  Var<T> conv_bias_act(const Var<T>& x, const std::string& prefix, int64_t stride) {
    Var<T> h = conv2d(x, params_.get(prefix + ".weight"), stride, 1);
    return leaky_relu(add(h, params_.get(prefix + ".bias")), T(0.2));
  }

  Var<T> standard_trunk_forward(const std::string& p, const Var<T>& f) {
    Var<T> t = conv_bias_act(f, p + "conv1", 2);
    t = conv_bias_act(t, p + "conv2", 2);
    t = conv_bias_act(t, p + "conv3", 2);
    return gap(t);
  }

  Var<T> shared_trunk_forward(const std::string& p, const Var<T>& f) {
    Var<T> t = conv_bias_act(f, p + "conv1", 2);
    t = conv_bias_act(t, p + "conv2", 2);
    t = conv_bias_act(t, p + "conv3", 2);
    t = conv_bias_act(t, p + "conv4", 2);
    t = conv_bias_act(t, p + "conv5", 2);
    t = gap(t);  // [N,d]
    return leaky_relu(linear(t, params_.get(p + "fc.weight"), params_.get(p + "fc.bias")), T(0.2));
  }

  Var<T> residual_block(const Var<T>& x, int stage, int64_t b, int64_t stride) {
    std::string p = "backbone.s" + std::to_string(stage + 1) + ".b" + std::to_string(b) + ".";
    Var<T> h = conv2d(x, params_.get(p + "conv1.weight"), stride, 1);
    h = leaky_relu(group_norm(h, params_.get(p + "gn1.gamma"), params_.get(p + "gn1.beta")),
                   T(0.2));
    h = conv2d(h, params_.get(p + "conv2.weight"), 1, 1);
    h = group_norm(h, params_.get(p + "gn2.gamma"), params_.get(p + "gn2.beta"));
    Var<T> skip = x;
    if (params_.has(p + "down.weight")) {
      skip = conv2d(x, params_.get(p + "down.weight"), stride, 0);
      skip = group_norm(skip, params_.get(p + "down.gamma"), params_.get(p + "down.beta"));
    }
    return leaky_relu(add(h, skip), T(0.2));
  }

  void add_gn(const std::string& prefix, int64_t c) {
    params_.add(prefix + ".gamma", Tensor<T>::full(Shape{c}, T(1)));
    params_.add(prefix + ".beta", Tensor<T>::zeros(Shape{c}));
  }

  void build_backbone(Rng& rng) {
    int64_t s = cfg_.backbone_width / 8;
    params_.add("backbone.stem.weight", he_conv_init<T>(7, 7, 6, s, rng));
    add_gn("backbone.stem", s);
    const int64_t blocks[4] = {3, 4, 6, 3};
    int64_t in = s;
    for (int stage = 0; stage < 4; ++stage) {
      int64_t out = s << stage;
      for (int64_t b = 0; b < blocks[stage]; ++b) {
        std::string p = "backbone.s" + std::to_string(stage + 1) + ".b" + std::to_string(b) + ".";
        params_.add(p + "conv1.weight", he_conv_init<T>(3, 3, in, out, rng));
        add_gn(p + "gn1", out);
        params_.add(p + "conv2.weight", he_conv_init<T>(3, 3, out, out, rng));
        add_gn(p + "gn2", out);
        if (in != out) {
          params_.add(p + "down.weight", he_conv_init<T>(1, 1, in, out, rng));
          add_gn(p + "down", out);
        }
        in = out;
      }
    }
  }

  void add_conv_bias(const std::string& prefix, int64_t cin, int64_t cout, Rng& rng) {
    params_.add(prefix + ".weight", he_conv_init<T>(3, 3, cin, cout, rng));
    params_.add(prefix + ".bias", Tensor<T>::zeros(Shape{cout}));
  }

  void build_standard_head(int idx, Rng& rng) {
    const LayerSpec& l = spec_.layer(idx);
    int64_t c = cfg_.backbone_width, h = c / 2;
    std::string p = "head" + std::to_string(idx) + ".";
    add_conv_bias(p + "conv1", c, h, rng);
    add_conv_bias(p + "conv2", h, h, rng);
    add_conv_bias(p + "conv3", h, c, rng);
    int64_t fo = head_fc_out_dim(cfg_.variant, l);
    Tensor<T> w = Tensor<T>::zeros(Shape{c, fo});
    Tensor<T> b = Tensor<T>::zeros(Shape{fo});
    if (cfg_.variant == HeadVariant::Separable) {
      // Zero offsets at init need only one factor at zero; the other factor
      // keeps gradients alive. First k*k*I outputs are the zeroed factor.
      int64_t k2i = l.kernel * l.kernel * l.c_in;
      for (int64_t r = 0; r < c; ++r)
        for (int64_t j = k2i; j < fo; ++j)
          w[r * fo + j] = static_cast<T>(rng.normal() / std::sqrt(double(c)));
    }
    params_.add(p + "fc.weight", std::move(w));
    params_.add(p + "fc.bias", std::move(b));
  }

  void build_shared_trunk(int idx, Rng& rng) {
    int64_t c = cfg_.backbone_width, q = c / 4, d = cfg_.shared_fc_dim;
    std::string p = "head" + std::to_string(idx) + ".";
    add_conv_bias(p + "conv1", c, q, rng);
    add_conv_bias(p + "conv2", q, q, rng);
    add_conv_bias(p + "conv3", q, q, rng);
    add_conv_bias(p + "conv4", q, q, rng);
    add_conv_bias(p + "conv5", q, d, rng);
    params_.add(p + "fc.weight", he_fc_init<T>(d, d, rng));
    params_.add(p + "fc.bias", Tensor<T>::zeros(Shape{d}));
  }

  void build_shared_pair(Rng& rng) {
    int64_t d = cfg_.shared_fc_dim;
    params_.add("shared.fc1.weight", he_fc_init<T>(d, cs_ * cs_, rng));
    params_.add("shared.fc1.bias", Tensor<T>::zeros(Shape{cs_ * cs_}));
    params_.add("shared.fc2.weight", Tensor<T>::zeros(Shape{cs_, cs_}));
    params_.add("shared.fc2.bias", Tensor<T>::zeros(Shape{cs_}));
  }

  GeneratorSpec spec_;
  HyperNetConfig cfg_;
  std::vector<int> refined_;
  int64_t cs_ = 0;
  ParamStore<T> params_;
};

template <class T>
void save_hypernet(const std::filesystem::path& dir, const HyperNet<T>& h) {
  std::filesystem::create_directories(dir);
  json j;
  j["config"] = hypernet_config_to_json(h.config());
  j["generator_spec"] = spec_to_json(h.generator_spec());
  save_json(dir / "config.json", j);
  save_param_store(dir, h.params());
}

template <class T>
HyperNet<T> load_hypernet(const std::filesystem::path& dir) {
  json j = load_json(dir / "config.json");
  check_config(j.contains("config") && j.contains("generator_spec"),
               "hypernet config.json needs config and generator_spec");
  HyperNet<T> h(spec_from_json(j["generator_spec"]), hypernet_config_from_json(j["config"]), 0);
  load_param_store(dir, h.params());
  return h;
}

}  // namespace hyperinvert
