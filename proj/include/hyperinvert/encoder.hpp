#pragma once

#include "hyperinvert/core/serialize.hpp"
#include "hyperinvert/genspec.hpp"

namespace hyperinvert {

// Image -> initial latent estimate. Four stride-2 conv blocks (striding
// stops once the grid is small), global average pooling, one FC.
template <class T>
class LatentEncoder {
 public:
  LatentEncoder(GeneratorSpec spec, int64_t width, uint64_t seed)
      : spec_(std::move(spec)), width_(width) {
    spec_.validate();
    check_config(width_ >= 4, "encoder width must be at least 4");
    Rng rng(Rng::derive(seed, 0x656e63ULL));
    auto add_conv = [&](const std::string& p, int64_t cin, int64_t cout) {
      params_.add(p + ".weight", he_conv_init<T>(3, 3, cin, cout, rng));
      params_.add(p + ".bias", Tensor<T>::zeros(Shape{cout}));
    };
    add_conv("conv1", 3, width_);
    add_conv("conv2", width_, width_);
    add_conv("conv3", width_, 2 * width_);
    add_conv("conv4", 2 * width_, 2 * width_);
    params_.add("fc.weight", he_fc_init<T>(2 * width_, spec_.latent_dim, rng));
    params_.add("fc.bias", Tensor<T>::zeros(Shape{spec_.latent_dim}));
  }

  const GeneratorSpec& generator_spec() const { return spec_; }
  int64_t width() const { return width_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }
  void set_params_requires_grad(bool rg) { params_.set_requires_grad(rg); }

  // [N,R,R,3] -> [N, latent]
  Var<T> encode(const Var<T>& image) {
    check_shape(image.shape().size() == 4 && image.shape()[3] == 3,
                "encoder input must be [N,R,R,3], got " + shape_str(image.shape()));
    auto ds = [](const Var<T>& v) { return v.shape()[1] >= 8 ? int64_t(2) : int64_t(1); };
    Var<T> h = block(image, "conv1", ds(image));
    h = block(h, "conv2", ds(h));
    h = block(h, "conv3", ds(h));
    h = block(h, "conv4", ds(h));
    int64_t hw = h.shape()[1] * h.shape()[2];
    Var<T> pooled = mul_scalar(sum_axes(h, {1, 2}, false), T(1) / static_cast<T>(hw));
    return linear(pooled, params_.get("fc.weight"), params_.get("fc.bias"));
  }

 private:
  Var<T> block(const Var<T>& x, const std::string& p, int64_t stride) {
    Var<T> h = conv2d(x, params_.get(p + ".weight"), stride, 1);
    return leaky_relu(add(h, params_.get(p + ".bias")), T(0.2));
  }

  GeneratorSpec spec_;
  int64_t width_;
  ParamStore<T> params_;
};

template <class T>
void save_encoder(const std::filesystem::path& dir, const LatentEncoder<T>& e) {
  std::filesystem::create_directories(dir);
  json j;
  j["width"] = e.width();
  j["generator_spec"] = spec_to_json(e.generator_spec());
  save_json(dir / "config.json", j);
  save_param_store(dir, e.params());
}

template <class T>
LatentEncoder<T> load_encoder(const std::filesystem::path& dir) {
  json j = load_json(dir / "config.json");
  check_config(j.contains("width") && j.contains("generator_spec"),
               "encoder config.json needs width and generator_spec");
  LatentEncoder<T> e(spec_from_json(j["generator_spec"]), j["width"].get<int64_t>(), 0);
  load_param_store(dir, e.params());
  return e;
}

}  // namespace hyperinvert
