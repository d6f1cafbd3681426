#pragma once

#include "hyperinvert/generator.hpp"

namespace hyperinvert {

// Weight offsets and their algebra. An offset delta for a layer with kernel
// [kh,kw,I,O] is any tensor broadcastable to [N,kh,kw,I,O]; per-channel
// predictions use [N,1,1,I,O]. The refined kernel is theta * (1 + delta),
// applied to the raw kernel before style modulation. Offsets from several
// refinement passes combine by summing the deltas and applying once.

template <class T>
using OffsetMap = std::map<int, Var<T>>;  // layer index -> delta (differentiable)

template <class T>
using OffsetTensors = std::map<int, Tensor<T>>;  // layer index -> delta values

// theta * (1 + delta); delta broadcastable to theta's shape (leading size-1
// axes allowed). The result keeps theta's shape.
template <class T>
Tensor<T> modulate_weights(const Tensor<T>& theta, const Tensor<T>& delta) {
  Tensor<T> one_plus = tensor_map(delta, [](T v) { return v + T(1); });
  Tensor<T> out = tensor_mul(theta, one_plus);
  check_shape(shape_numel(out.shape()) == theta.size(),
              "offset delta " + shape_str(delta.shape()) + " does not broadcast onto kernel " +
                  shape_str(theta.shape()));
  return out.reshaped(theta.shape());
}

// Sum per-layer deltas across refinement steps (differentiable). Every step
// must carry the same layer set.
template <class T>
OffsetMap<T> accumulate_offsets(const std::vector<OffsetMap<T>>& steps) {
  check_config(!steps.empty(), "accumulate_offsets: no steps");
  OffsetMap<T> acc = steps.front();
  for (size_t s = 1; s < steps.size(); ++s) {
    check_config(steps[s].size() == acc.size(), "accumulate_offsets: step layer sets differ");
    for (auto& [idx, delta] : acc) {
      auto it = steps[s].find(idx);
      check_config(it != steps[s].end(),
                   "accumulate_offsets: step missing layer " + std::to_string(idx));
      delta = add(delta, it->second);
    }
  }
  return acc;
}

template <class T>
OffsetTensors<T> accumulate_offset_tensors(const std::vector<OffsetTensors<T>>& steps) {
  check_config(!steps.empty(), "accumulate_offsets: no steps");
  OffsetTensors<T> acc = steps.front();
  for (size_t s = 1; s < steps.size(); ++s) {
    check_config(steps[s].size() == acc.size(), "accumulate_offsets: step layer sets differ");
    for (auto& [idx, delta] : acc) {
      auto it = steps[s].find(idx);
      check_config(it != steps[s].end(),
                   "accumulate_offsets: step missing layer " + std::to_string(idx));
      delta = tensor_add(delta, it->second);
    }
  }
  return acc;
}

template <class T>
OffsetTensors<T> materialize_offsets(const OffsetMap<T>& offsets) {
  OffsetTensors<T> out;
  for (const auto& [idx, v] : offsets) out.emplace(idx, v.value());
  return out;
}

template <class T>
OffsetMap<T> offsets_as_constants(const OffsetTensors<T>& offsets) {
  OffsetMap<T> out;
  for (const auto& [idx, t] : offsets) out.emplace(idx, Var<T>::constant(t));
  return out;
}

// Extract sample n from batched deltas [N,...] -> [1,...].
template <class T>
OffsetTensors<T> slice_sample_offsets(const OffsetTensors<T>& offsets, int64_t n) {
  OffsetTensors<T> out;
  for (const auto& [idx, t] : offsets) {
    const Shape& s = t.shape();
    check_shape(s.size() == 5, "offset tensors must be rank 5");
    int64_t N = s[0];
    check_shape(n >= 0 && n < N, "sample index out of range");
    Shape os = s;
    os[0] = 1;
    int64_t per = t.size() / N;
    Tensor<T> o(os);
    std::copy(t.data() + n * per, t.data() + (n + 1) * per, o.data());
    out.emplace(idx, std::move(o));
  }
  return out;
}

// Full modulation pipeline at value level, mirroring the generator's styled
// convolution: offsets on the raw kernel, then style scaling, then optional
// demodulation. style is [N, c_in]; the result is one kernel per sample.
template <class T>
Tensor<T> styled_demodulated_kernel(const Tensor<T>& theta, const Tensor<T>* delta,
                                    const Tensor<T>& style, bool demodulate, T eps = T(1e-8)) {
  check_shape(theta.shape().size() == 4, "kernel must be [kh,kw,I,O]");
  int64_t kh = theta.shape()[0], kw = theta.shape()[1], I = theta.shape()[2],
          O = theta.shape()[3];
  check_shape(style.shape().size() == 2 && style.shape()[1] == I,
              "style must be [N," + std::to_string(I) + "]");
  int64_t N = style.shape()[0];
  Tensor<T> k = theta.reshaped(Shape{1, kh, kw, I, O});
  if (delta) {
    Tensor<T> one_plus = tensor_map(*delta, [](T v) { return v + T(1); });
    k = tensor_mul(k, one_plus);
  }
  k = tensor_mul(k, style.reshaped(Shape{N, 1, 1, I, 1}));
  check_shape(k.shape() == (Shape{N, kh, kw, I, O}),
              "modulated kernel has unexpected shape " + shape_str(k.shape()));
  if (demodulate) {
    Tensor<T> ss = reduce_sum(tensor_mul(k, k), {1, 2, 3}, true);
    Tensor<T> d = tensor_map(ss, [eps](T v) { return T(1) / std::sqrt(v + eps); });
    k = tensor_mul(k, d);
  }
  return k;
}

// Domain adaptation: bake per-image offsets into a generator's raw kernels.
// Deltas must be sample-free (leading batch axis 1).
template <class T>
void apply_offsets_to_generator(Generator<T>& g, const OffsetTensors<T>& offsets) {
  for (const auto& [idx, delta] : offsets) {
    const LayerSpec& l = g.spec().layer(idx);
    check_shape(delta.shape().size() == 5 && delta.shape()[0] == 1,
                "transfer needs single-sample offsets for " + l.name + ", got " +
                    shape_str(delta.shape()));
    check_shape(delta.shape()[3] == l.c_in && delta.shape()[4] == l.c_out &&
                    (delta.shape()[1] == 1 || delta.shape()[1] == l.kernel) &&
                    (delta.shape()[2] == 1 || delta.shape()[2] == l.kernel),
                "offsets for " + l.name + " do not match its kernel: " +
                    shape_str(delta.shape()));
    Var<T>& w = g.layer_weight(idx);
    Shape kshape = w.shape();  // [kh,kw,I,O]
    Tensor<T> theta5 = w.value().reshaped(Shape{1, kshape[0], kshape[1], kshape[2], kshape[3]});
    Tensor<T> updated = modulate_weights(theta5, delta);
    w.value() = updated.reshaped(kshape);
  }
}

// Returns a copy of the target generator with the offsets baked in. The
// target must expose every layer the offsets reference, with matching
// channel counts; a partial match is an error rather than a partial apply.
template <class T>
Generator<T> transfer_offsets(const OffsetTensors<T>& offsets, const Generator<T>& target) {
  Generator<T> adapted = target.clone();
  apply_offsets_to_generator(adapted, offsets);
  return adapted;
}

// ---------------------------------------------------------------------------
// Offset directory format: layers.json manifest + one tensor file per layer.
// ---------------------------------------------------------------------------

template <class T>
void save_offsets(const std::filesystem::path& dir, const OffsetTensors<T>& offsets) {
  std::filesystem::create_directories(dir);
  json manifest;
  json layers = json::array();
  for (const auto& [idx, t] : offsets) {
    std::string file = "layer" + std::to_string(idx) + ".bin";
    json shape = json::array();
    for (int64_t d : t.shape()) shape.push_back(d);
    layers.push_back({{"index", idx}, {"file", file}, {"shape", shape}});
    save_tensor(dir / file, t);
  }
  manifest["layers"] = layers;
  save_json(dir / "layers.json", manifest);
}

template <class T>
OffsetTensors<T> load_offsets(const std::filesystem::path& dir) {
  json manifest = load_json(dir / "layers.json");
  check_config(manifest.contains("layers") && manifest["layers"].is_array(),
               "layers.json must contain a layers array");
  OffsetTensors<T> out;
  for (const auto& e : manifest["layers"]) {
    int idx = 0;
    std::string file;
    try {
      idx = e.at("index").get<int>();
      file = e.at("file").get<std::string>();
    } catch (const json::exception& ex) {
      throw ConfigError(std::string("malformed layers.json entry: ") + ex.what());
    }
    Tensor<T> t = load_tensor<T>(dir / file);
    if (e.contains("shape")) {
      Shape want;
      for (const auto& d : e["shape"]) want.push_back(d.get<int64_t>());
      check_shape(t.shape() == want, "offset tensor " + file + " shape " + shape_str(t.shape()) +
                                         " does not match manifest " + shape_str(want));
    }
    check_config(out.emplace(idx, std::move(t)).second,
                 "duplicate layer index in layers.json: " + std::to_string(idx));
  }
  return out;
}

}  // namespace hyperinvert
