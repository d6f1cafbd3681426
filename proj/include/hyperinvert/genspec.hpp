#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hyperinvert/core/common.hpp"

namespace hyperinvert {

// ---------------------------------------------------------------------------
// Generator layer table
// ---------------------------------------------------------------------------

enum class LayerKind { Conv, ToRGB };
enum class LayerGroup { Coarse, Medium, Fine };

inline std::string to_string(LayerKind k) { return k == LayerKind::Conv ? "conv" : "torgb"; }
inline std::string to_string(LayerGroup g) {
  switch (g) {
    case LayerGroup::Coarse: return "coarse";
    case LayerGroup::Medium: return "medium";
    default: return "fine";
  }
}

inline LayerKind layer_kind_from_string(const std::string& s) {
  if (s == "conv") return LayerKind::Conv;
  if (s == "torgb") return LayerKind::ToRGB;
  throw ConfigError("unknown layer kind: " + s);
}

inline LayerGroup layer_group_from_string(const std::string& s) {
  if (s == "coarse") return LayerGroup::Coarse;
  if (s == "medium") return LayerGroup::Medium;
  if (s == "fine") return LayerGroup::Fine;
  throw ConfigError("unknown layer group: " + s);
}

struct LayerSpec {
  int index = 0;  // 1-based position in the synthesis order
  std::string name;
  int64_t kernel = 3;
  int64_t c_in = 0;
  int64_t c_out = 0;
  LayerGroup group = LayerGroup::Coarse;
  LayerKind kind = LayerKind::Conv;
};

struct GeneratorSpec {
  std::string name;
  int64_t latent_dim = 0;
  std::vector<LayerSpec> layers;

  // Synthesis levels: each level is a run of convs closed by one toRGB.
  // Level 0 renders the 4x4 base; every later level doubles resolution.
  std::vector<std::vector<int>> levels() const {
    std::vector<std::vector<int>> out;
    std::vector<int> cur;
    for (const auto& l : layers) {
      cur.push_back(l.index);
      if (l.kind == LayerKind::ToRGB) {
        out.push_back(cur);
        cur.clear();
      }
    }
    check_config(cur.empty(), "generator spec does not end with a toRGB layer");
    return out;
  }

  int64_t output_resolution() const {
    size_t n = levels().size();
    return int64_t(4) << (n - 1);
  }

  int64_t max_conv_channels() const {
    int64_t m = 0;
    for (const auto& l : layers)
      if (l.kind == LayerKind::Conv) m = std::max({m, l.c_in, l.c_out});
    return m;
  }

  const LayerSpec& layer(int index) const {
    check_config(index >= 1 && index <= static_cast<int>(layers.size()),
                 "layer index out of range: " + std::to_string(index));
    return layers[static_cast<size_t>(index - 1)];
  }

  void validate() const {
    check_config(!name.empty(), "generator spec has no name");
    check_config(latent_dim >= 1, "latent_dim must be positive");
    check_config(!layers.empty(), "generator spec has no layers");
    for (size_t i = 0; i < layers.size(); ++i) {
      const LayerSpec& l = layers[i];
      check_config(l.index == static_cast<int>(i + 1),
                   "layer indices must be contiguous from 1, got " + std::to_string(l.index) +
                       " at position " + std::to_string(i + 1));
      check_config(l.kernel == 1 || l.kernel == 3, l.name + ": kernel must be 1 or 3");
      check_config(l.c_in >= 1 && l.c_out >= 1, l.name + ": channel counts must be positive");
      if (l.kind == LayerKind::ToRGB) {
        check_config(l.kernel == 1, l.name + ": toRGB layers use 1x1 kernels");
        check_config(l.c_out == 3, l.name + ": toRGB layers emit 3 channels");
      }
    }
    check_config(layers.front().kind == LayerKind::Conv, "first layer must be a conv");
    auto lv = levels();
    check_config(!lv.empty(), "no synthesis levels");
    // Channel chain: each conv consumes what the previous conv produced.
    int64_t prev_out = layers.front().c_in;
    for (const auto& l : layers) {
      if (l.kind == LayerKind::Conv) {
        check_config(l.c_in == prev_out, l.name + ": c_in " + std::to_string(l.c_in) +
                                             " does not chain from previous conv output " +
                                             std::to_string(prev_out));
        prev_out = l.c_out;
      } else {
        check_config(l.c_in == prev_out,
                     l.name + ": toRGB c_in does not match current conv width");
      }
    }
    for (const auto& level : lv)
      check_config(level.size() >= 2, "every level needs at least one conv and one toRGB");
  }
};

// ---------------------------------------------------------------------------
// Built-in specs
// ---------------------------------------------------------------------------

// The 26-layer 1024x1024 style generator layout this project's accounting
// targets: 17 convs and 9 toRGBs over 9 levels, 512 channels up to level 4,
// halving afterwards.
inline GeneratorSpec full_stylegan2_spec() {
  GeneratorSpec s;
  s.name = "stylegan2_1024";
  s.latent_dim = 512;
  auto add = [&](const std::string& name, int64_t kernel, int64_t cin, int64_t cout,
                 LayerGroup g, LayerKind k) {
    LayerSpec l;
    l.index = static_cast<int>(s.layers.size()) + 1;
    l.name = name;
    l.kernel = kernel;
    l.c_in = cin;
    l.c_out = cout;
    l.group = g;
    l.kind = k;
    s.layers.push_back(l);
  };
  auto C = LayerGroup::Coarse;
  auto M = LayerGroup::Medium;
  auto F = LayerGroup::Fine;
  auto conv = LayerKind::Conv;
  auto rgb = LayerKind::ToRGB;
  add("Conv 1", 3, 512, 512, C, conv);     // 1   4x4
  add("toRGB 1", 1, 512, 3, C, rgb);       // 2
  add("Conv 2", 3, 512, 512, C, conv);     // 3   8x8
  add("Conv 3", 3, 512, 512, C, conv);     // 4
  add("toRGB 2", 1, 512, 3, C, rgb);       // 5
  add("Conv 4", 3, 512, 512, M, conv);     // 6   16x16
  add("Conv 5", 3, 512, 512, M, conv);     // 7
  add("toRGB 3", 1, 512, 3, M, rgb);       // 8
  add("Conv 6", 3, 512, 512, M, conv);     // 9   32x32
  add("Conv 7", 3, 512, 512, M, conv);     // 10
  add("toRGB 4", 1, 512, 3, M, rgb);       // 11
  add("Conv 8", 3, 512, 512, F, conv);     // 12  64x64
  add("Conv 9", 3, 512, 512, F, conv);     // 13
  add("toRGB 5", 1, 512, 3, F, rgb);       // 14
  add("Conv 10", 3, 512, 256, F, conv);    // 15  128x128
  add("Conv 11", 3, 256, 256, F, conv);    // 16
  add("toRGB 6", 1, 256, 3, F, rgb);       // 17
  add("Conv 12", 3, 256, 128, F, conv);    // 18  256x256
  add("Conv 13", 3, 128, 128, F, conv);    // 19
  add("toRGB 7", 1, 128, 3, F, rgb);       // 20
  add("Conv 14", 3, 128, 64, F, conv);     // 21  512x512
  add("Conv 15", 3, 64, 64, F, conv);      // 22
  add("toRGB 8", 1, 64, 3, F, rgb);        // 23
  add("Conv 16", 3, 64, 32, F, conv);      // 24  1024x1024
  add("Conv 17", 3, 32, 32, F, conv);      // 25
  add("toRGB 9", 1, 32, 3, F, rgb);        // 26
  s.validate();
  return s;
}

// Desk-scale generator with the same structure: base channels B at the
// output level, doubling toward the base and capped so at least the two
// deepest levels sit at the cap (giving the mixed head layout something to
// share). Resolution must be a power of two, at least 8.
inline GeneratorSpec toy_spec(int64_t resolution, int64_t base_channels) {
  check_config(resolution >= 8 && is_power_of_two(resolution),
               "toy resolution must be a power of two >= 8");
  check_config(base_channels >= 4 && is_power_of_two(base_channels),
               "toy base channels must be a power of two >= 4");
  int64_t L = ilog2(resolution) - 1;  // levels: 4,8,...,resolution
  int64_t cap = std::min<int64_t>(512, base_channels << std::max<int64_t>(0, L - 2));
  auto channels = [&](int64_t level) {
    return std::min(cap, base_channels << (L - 1 - level));
  };

  // Group assignment over levels. With only two levels the split happens
  // inside the last level instead.
  int64_t c_lv = 0, m_lv = 0;
  if (L >= 3) {
    c_lv = std::max<int64_t>(1, llround(2.0 * static_cast<double>(L) / 9.0));
    m_lv = c_lv;
    while (c_lv + m_lv > L - 1) {
      if (m_lv > 1)
        --m_lv;
      else
        --c_lv;
    }
  }
  auto group_for = [&](int64_t level, LayerKind kind) {
    if (L == 2) {
      if (level == 0) return LayerGroup::Coarse;
      return kind == LayerKind::Conv ? LayerGroup::Medium : LayerGroup::Fine;
    }
    if (level < c_lv) return LayerGroup::Coarse;
    if (level < c_lv + m_lv) return LayerGroup::Medium;
    return LayerGroup::Fine;
  };

  GeneratorSpec s;
  s.name = "toy_r" + std::to_string(resolution) + "_b" + std::to_string(base_channels);
  s.latent_dim = cap;
  int conv_n = 0, rgb_n = 0;
  auto add = [&](int64_t kernel, int64_t cin, int64_t cout, LayerGroup g, LayerKind k) {
    LayerSpec l;
    l.index = static_cast<int>(s.layers.size()) + 1;
    l.name = (k == LayerKind::Conv ? "Conv " + std::to_string(++conv_n)
                                   : "toRGB " + std::to_string(++rgb_n));
    l.kernel = kernel;
    l.c_in = cin;
    l.c_out = cout;
    l.group = g;
    l.kind = k;
    s.layers.push_back(l);
  };
  add(3, channels(0), channels(0), group_for(0, LayerKind::Conv), LayerKind::Conv);
  add(1, channels(0), 3, group_for(0, LayerKind::ToRGB), LayerKind::ToRGB);
  for (int64_t lv = 1; lv < L; ++lv) {
    add(3, channels(lv - 1), channels(lv), group_for(lv, LayerKind::Conv), LayerKind::Conv);
    add(3, channels(lv), channels(lv), group_for(lv, LayerKind::Conv), LayerKind::Conv);
    add(1, channels(lv), 3, group_for(lv, LayerKind::ToRGB), LayerKind::ToRGB);
  }
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------
// Refinement policy: which generator layers receive predicted offsets
// ---------------------------------------------------------------------------

enum class RefinementPolicy { MediumFineConv, AllConv, AllIncludingToRGB, None };

inline std::string to_string(RefinementPolicy p) {
  switch (p) {
    case RefinementPolicy::MediumFineConv: return "medium_fine_conv";
    case RefinementPolicy::AllConv: return "all_conv";
    case RefinementPolicy::AllIncludingToRGB: return "all_including_torgb";
    default: return "none";
  }
}

inline RefinementPolicy refinement_policy_from_string(const std::string& s) {
  if (s == "medium_fine_conv") return RefinementPolicy::MediumFineConv;
  if (s == "all_conv") return RefinementPolicy::AllConv;
  if (s == "all_including_torgb") return RefinementPolicy::AllIncludingToRGB;
  if (s == "none") return RefinementPolicy::None;
  throw ConfigError("unknown refinement policy: " + s);
}

inline std::vector<int> select_refined_layers(const GeneratorSpec& spec, RefinementPolicy p) {
  std::vector<int> out;
  for (const auto& l : spec.layers) {
    switch (p) {
      case RefinementPolicy::MediumFineConv:
        if (l.kind == LayerKind::Conv && l.group != LayerGroup::Coarse) out.push_back(l.index);
        break;
      case RefinementPolicy::AllConv:
        if (l.kind == LayerKind::Conv) out.push_back(l.index);
        break;
      case RefinementPolicy::AllIncludingToRGB:
        out.push_back(l.index);
        break;
      case RefinementPolicy::None:
        break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Hypernetwork configuration
// ---------------------------------------------------------------------------

enum class HeadVariant { Naive, PerChannel, SharedMix, Separable };

inline std::string to_string(HeadVariant v) {
  switch (v) {
    case HeadVariant::Naive: return "naive";
    case HeadVariant::PerChannel: return "per_channel";
    case HeadVariant::SharedMix: return "shared_mix";
    default: return "separable";
  }
}

inline HeadVariant head_variant_from_string(const std::string& s) {
  if (s == "naive") return HeadVariant::Naive;
  if (s == "per_channel") return HeadVariant::PerChannel;
  if (s == "shared_mix") return HeadVariant::SharedMix;
  if (s == "separable") return HeadVariant::Separable;
  throw ConfigError("unknown head variant: " + s);
}

struct HyperNetConfig {
  HeadVariant variant = HeadVariant::SharedMix;
  RefinementPolicy policy = RefinementPolicy::MediumFineConv;
  int64_t backbone_width = 512;  // final-stage channel count; stem is width/8
  int64_t shared_fc_dim = 512;   // bottleneck of the weight-sharing pair

  void validate() const {
    check_config(backbone_width >= 8 && backbone_width % 8 == 0,
                 "backbone_width must be a positive multiple of 8");
    check_config(backbone_width % 4 == 0, "backbone_width must be divisible by 4");
    check_config(shared_fc_dim >= 1, "shared_fc_dim must be positive");
  }
};

// A layer is routed to a weight-sharing head when it is a square conv at the
// generator's widest conv channel count.
inline bool shared_head_eligible(const GeneratorSpec& spec, const LayerSpec& l) {
  return l.kind == LayerKind::Conv && l.c_in == l.c_out && l.c_in == spec.max_conv_channels();
}

// ---------------------------------------------------------------------------
// Analytical parameter accounting. These formulas are the contract the
// realized network must match exactly (tested via ParamStore::count_params).
// ---------------------------------------------------------------------------

// ResNet34 block pattern [3,4,6,3], stem width/8 over 6 input channels,
// per-channel scale+shift pairs after every conv.
inline int64_t backbone_param_count(int64_t width) {
  check_config(width >= 8 && width % 8 == 0, "backbone width must be a multiple of 8");
  int64_t s = width / 8;
  int64_t total = 49 * 6 * s + 2 * s;
  int64_t in = s;
  const int64_t blocks[4] = {3, 4, 6, 3};
  for (int stage = 0; stage < 4; ++stage) {
    int64_t out = s << stage;
    for (int64_t b = 0; b < blocks[stage]; ++b) {
      total += 9 * in * out + 2 * out;
      total += 9 * out * out + 2 * out;
      if (in != out) total += in * out + 2 * out;
      in = out;
    }
  }
  return total;
}

// Output width of a head's final fully connected layer.
inline int64_t head_fc_out_dim(HeadVariant v, const LayerSpec& l) {
  int64_t k2 = l.kernel * l.kernel;
  switch (v) {
    case HeadVariant::Naive: return k2 * l.c_in * l.c_out;
    case HeadVariant::PerChannel: return l.c_in * l.c_out;
    case HeadVariant::Separable: return k2 * (l.c_in + l.c_out);
    case HeadVariant::SharedMix: return l.c_in * l.c_out;  // non-eligible layers
  }
  return 0;
}

// Three 3x3 stride-2 convs (c -> c/2 -> c/2 -> c) plus biases.
inline int64_t standard_head_trunk_params(int64_t c) {
  int64_t h = c / 2;
  return (9 * c * h + h) + (9 * h * h + h) + (9 * h * c + c);
}

// Five 3x3 convs (c -> c/4 -> c/4 -> c/4 -> c/4 -> d) plus a per-head d x d
// fully connected layer.
inline int64_t shared_head_trunk_params(int64_t c, int64_t d) {
  int64_t q = c / 4;
  return (9 * c * q + q) + 3 * (9 * q * q + q) + (9 * q * d + d) + (d * d + d);
}

// The pair of layers shared across all eligible heads: d -> Cs*Cs (then
// reshaped Cs x Cs) followed by a per-channel Cs x Cs map.
inline int64_t shared_pair_params(int64_t d, int64_t cs) {
  return (d * cs * cs + cs * cs) + (cs * cs + cs);
}

struct HeadCount {
  int layer_index = 0;
  std::string layer_name;
  bool shared = false;  // routed through the weight-sharing pair
  int64_t trunk = 0;
  int64_t fc = 0;
  int64_t total = 0;
};

struct ParamReport {
  std::string variant;
  int64_t backbone = 0;
  int64_t shared_pair = 0;
  std::vector<HeadCount> heads;
  int64_t heads_total = 0;
  int64_t total = 0;
};

inline ParamReport count_hypernet_params(const GeneratorSpec& spec, const HyperNetConfig& cfg) {
  spec.validate();
  cfg.validate();
  ParamReport r;
  r.variant = to_string(cfg.variant);
  r.backbone = backbone_param_count(cfg.backbone_width);
  int64_t c = cfg.backbone_width;
  int64_t d = cfg.shared_fc_dim;
  int64_t cs = spec.max_conv_channels();
  bool any_shared = false;
  for (int idx : select_refined_layers(spec, cfg.policy)) {
    const LayerSpec& l = spec.layer(idx);
    HeadCount h;
    h.layer_index = idx;
    h.layer_name = l.name;
    if (cfg.variant == HeadVariant::SharedMix && shared_head_eligible(spec, l)) {
      h.shared = true;
      any_shared = true;
      h.trunk = shared_head_trunk_params(c, d);
      h.fc = 0;  // the output pair is counted once, below
    } else {
      h.trunk = standard_head_trunk_params(c);
      int64_t fo = head_fc_out_dim(cfg.variant, l);
      h.fc = c * fo + fo;
    }
    h.total = h.trunk + h.fc;
    r.heads_total += h.total;
    r.heads.push_back(h);
  }
  if (any_shared) r.shared_pair = shared_pair_params(d, cs);
  r.total = r.backbone + r.shared_pair + r.heads_total;
  return r;
}

inline std::string format_param_report(const ParamReport& r) {
  std::ostringstream os;
  os << "variant: " << r.variant << "\n";
  os << "backbone params: " << r.backbone << "\n";
  if (r.shared_pair > 0) os << "shared output pair: " << r.shared_pair << "\n";
  os << "layer  name       head       trunk        fc           total\n";
  for (const auto& h : r.heads) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-6d %-10s %-10s %-12lld %-12lld %lld\n", h.layer_index,
                  h.layer_name.c_str(), h.shared ? "shared" : "standard",
                  static_cast<long long>(h.trunk), static_cast<long long>(h.fc),
                  static_cast<long long>(h.total));
    os << buf;
  }
  os << "heads total: " << r.heads_total << "\n";
  os << "total: " << r.total << "\n";
  return os.str();
}

// Table comparing every head variant on one generator, cheapest last.
inline std::string format_variant_comparison(const GeneratorSpec& spec,
                                             const HyperNetConfig& base) {
  std::ostringstream os;
  os << "generator: " << spec.name << "  (policy " << to_string(base.policy) << ", backbone "
     << base.backbone_width << ", shared fc " << base.shared_fc_dim << ")\n";
  os << "configuration   params\n";
  for (HeadVariant v :
       {HeadVariant::Naive, HeadVariant::PerChannel, HeadVariant::SharedMix,
        HeadVariant::Separable}) {
    HyperNetConfig cfg = base;
    cfg.variant = v;
    ParamReport r = count_hypernet_params(spec, cfg);
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%-15s %lld\n", r.variant.c_str(),
                  static_cast<long long>(r.total));
    os << buf;
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// JSON round-trip
// ---------------------------------------------------------------------------

inline nlohmann::json spec_to_json(const GeneratorSpec& s) {
  nlohmann::json j;
  j["name"] = s.name;
  j["latent_dim"] = s.latent_dim;
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : s.layers) {
    layers.push_back({{"index", l.index},
                      {"name", l.name},
                      {"kernel", l.kernel},
                      {"c_in", l.c_in},
                      {"c_out", l.c_out},
                      {"group", to_string(l.group)},
                      {"kind", to_string(l.kind)}});
  }
  j["layers"] = layers;
  return j;
}

inline GeneratorSpec spec_from_json(const nlohmann::json& j) {
  GeneratorSpec s;
  try {
    s.name = j.at("name").get<std::string>();
    s.latent_dim = j.at("latent_dim").get<int64_t>();
    for (const auto& lj : j.at("layers")) {
      LayerSpec l;
      l.index = lj.at("index").get<int>();
      l.name = lj.at("name").get<std::string>();
      l.kernel = lj.at("kernel").get<int64_t>();
      l.c_in = lj.at("c_in").get<int64_t>();
      l.c_out = lj.at("c_out").get<int64_t>();
      l.group = layer_group_from_string(lj.at("group").get<std::string>());
      l.kind = layer_kind_from_string(lj.at("kind").get<std::string>());
      s.layers.push_back(l);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed generator spec json: ") + e.what());
  }
  s.validate();
  return s;
}

inline nlohmann::json hypernet_config_to_json(const HyperNetConfig& c) {
  return {{"variant", to_string(c.variant)},
          {"policy", to_string(c.policy)},
          {"backbone_width", c.backbone_width},
          {"shared_fc_dim", c.shared_fc_dim}};
}

inline HyperNetConfig hypernet_config_from_json(const nlohmann::json& j) {
  HyperNetConfig c;
  try {
    if (j.contains("variant")) c.variant = head_variant_from_string(j.at("variant"));
    if (j.contains("policy")) c.policy = refinement_policy_from_string(j.at("policy"));
    if (j.contains("backbone_width")) c.backbone_width = j.at("backbone_width").get<int64_t>();
    if (j.contains("shared_fc_dim")) c.shared_fc_dim = j.at("shared_fc_dim").get<int64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed hypernet config json: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace hyperinvert
