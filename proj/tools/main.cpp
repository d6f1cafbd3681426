#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <iostream>

#include "hyperinvert/hyperinvert.hpp"

using namespace hyperinvert;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int64_t grid_cols(int64_t n) {
  int64_t c = 1;
  while (c * c < n) ++c;
  return c;
}

uint64_t fnv1a64(const std::string& s) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string config_hash(const json& j) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a64(j.dump())));
  return buf;
}

void check_device() {
  const char* dev = std::getenv("HYPERINVERT_DEVICE");
  if (!dev || !*dev) return;
  std::string d = dev;
  for (auto& c : d) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  check_config(d == "cpu", "HYPERINVERT_DEVICE=" + std::string(dev) +
                               " is not available; only cpu is supported");
}

HeadVariant parse_heads(const std::string& s) {
  if (s == "per_channel_shared_mix") return HeadVariant::SharedMix;
  return head_variant_from_string(s);
}

GeneratorSpec spec_from_section(const json& g) {
  if (g.contains("spec")) {
    std::string name = g.at("spec").get<std::string>();
    if (name == "stylegan2-1024") return full_stylegan2_spec();
    fs::path p(name);
    check_config(fs::exists(p), "unknown builtin spec or missing spec file: " + name);
    return spec_from_json(load_json(p));
  }
  int64_t res = g.value("resolution", 16);
  int64_t base = g.value("base_channels", 8);
  return toy_spec(res, base);
}

json load_experiment_config(const std::string& path) {
  json cfg = load_json(path);
  std::vector<std::string> missing;
  for (const char* s : {"generator", "encoder", "hypernet", "train", "loss"})
    if (!cfg.contains(s)) missing.push_back(s);
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw ConfigError("config is missing sections: " + list);
  }
  return cfg;
}

void write_metrics(const fs::path& out, const std::vector<double>& per_step_l2,
                   double wall_seconds, const json& hashed, const json& extra = {}) {
  json m;
  m["per_step_l2"] = per_step_l2;
  m["final_l2"] = per_step_l2.empty() ? 0.0 : per_step_l2.back();
  m["wall_seconds"] = wall_seconds;
  m["config_hash"] = config_hash(hashed);
  for (auto it = extra.begin(); it != extra.end(); ++it) m[it.key()] = it.value();
  save_json(out, m);
}

Tensor<float> gather_inputs(Generator<float>& g, const std::vector<std::string>& images,
                            int64_t sample_n, uint64_t seed) {
  int64_t res = g.spec().output_resolution();
  if (!images.empty()) {
    Tensor<float> batch(Shape{static_cast<int64_t>(images.size()), res, res, 3});
    int64_t row = res * res * 3;
    for (size_t i = 0; i < images.size(); ++i) {
      Tensor<float> img = read_png<float>(images[i]);
      check_shape(img.shape() == (Shape{res, res, 3}),
                  images[i] + " has shape " + shape_str(img.shape()) + ", generator expects " +
                      shape_str(Shape{res, res, 3}));
      std::copy(img.data(), img.data() + row, batch.data() + static_cast<int64_t>(i) * row);
    }
    return batch;
  }
  check_config(sample_n >= 1, "need --images or --sample N");
  Rng rng(Rng::derive(seed, 0x696d6773ULL));
  return g.generate(g.sample_latents(sample_n, rng));
}

// ---------------------------------------------------------------------------
// count-params
// ---------------------------------------------------------------------------

int cmd_count_params(const std::string& spec_name, int64_t resolution, int64_t base_channels,
                     const std::string& heads, const std::string& layers, int64_t backbone_width,
                     int64_t shared_fc_dim, bool compare, const std::string& json_out) {
  GeneratorSpec spec;
  if (!spec_name.empty()) {
    json sec = {{"spec", spec_name}};
    spec = spec_from_section(sec);
  } else {
    spec = toy_spec(resolution, base_channels);
  }
  HyperNetConfig cfg;
  cfg.variant = parse_heads(heads);
  cfg.policy = refinement_policy_from_string(layers);
  cfg.backbone_width = backbone_width;
  cfg.shared_fc_dim = shared_fc_dim;
  ParamReport report = count_hypernet_params(spec, cfg);
  std::cout << "generator: " << spec.name << "\n" << format_param_report(report);
  if (compare) std::cout << "\n" << format_variant_comparison(spec, cfg);
  if (!json_out.empty()) {
    json j;
    j["generator"] = spec.name;
    j["variant"] = report.variant;
    j["policy"] = layers;
    j["backbone"] = report.backbone;
    j["shared_pair"] = report.shared_pair;
    j["heads_total"] = report.heads_total;
    j["total"] = report.total;
    json heads_arr = json::array();
    for (const auto& h : report.heads)
      heads_arr.push_back({{"layer", h.layer_index},
                           {"name", h.layer_name},
                           {"shared", h.shared},
                           {"trunk", h.trunk},
                           {"fc", h.fc},
                           {"total", h.total}});
    j["heads"] = heads_arr;
    save_json(json_out, j);
  }
  return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

int cmd_train(const std::string& config_path, const std::string& out_override,
              int64_t seed_override, bool dry_run) {
  json cfg = load_experiment_config(config_path);
  uint64_t seed = seed_override >= 0 ? static_cast<uint64_t>(seed_override)
                                     : cfg.value("seed", uint64_t{0});
  fs::path out(out_override.empty() ? cfg.value("output_dir", std::string{"run"}) : out_override);

  GeneratorSpec spec = spec_from_section(cfg.at("generator"));
  uint64_t gen_seed = cfg.at("generator").value("seed", seed + 1);
  HyperNetConfig hcfg = hypernet_config_from_json(cfg.at("hypernet"));
  TrainConfig<float> tcfg = train_config_from_json<float>(cfg.at("train"));
  tcfg.loss = loss_config_from_json<float>(cfg.at("loss"));
  tcfg.seed = seed;
  int64_t enc_width = cfg.at("encoder").value("width", 64);
  int64_t enc_steps = cfg.at("encoder").value("pretrain_steps", int64_t{300});
  int64_t dataset_size = cfg.at("train").value("dataset_size", int64_t{2000});

  Generator<float> g(spec, gen_seed);
  LatentEncoder<float> enc(spec, enc_width, seed + 2);
  HyperNet<float> h(spec, hcfg, seed + 3);

  std::cout << "generator " << spec.name << ": " << g.params().count_params() << " params\n";
  std::cout << "encoder: " << enc.params().count_params() << " params\n";
  ParamReport report = count_hypernet_params(spec, hcfg);
  std::cout << "hypernetwork (realized): " << h.params().count_params() << " params\n";
  std::cout << "hypernetwork (analytic): " << report.total << " params\n";
  if (dry_run) {
    std::cout << "dry run; no training performed\n";
    return 0;
  }

  fs::create_directories(out);
  save_json(out / "config.json", cfg);
  auto t0 = Clock::now();

  std::cout << "sampling dataset (" << dataset_size << " images)\n";
  Tensor<float> data = make_dataset(g, dataset_size, seed + 4);

  std::string enc_ckpt = cfg.at("encoder").value("checkpoint", std::string{});
  if (enc_ckpt.empty()) {
    std::cout << "pretraining encoder (" << enc_steps << " steps)\n";
    TrainConfig<float> ecfg = tcfg;
    ecfg.steps = enc_steps;
    TrainLog elog = pretrain_encoder(data, g, enc, ecfg);
    append_train_log_jsonl(out / "encoder_log.jsonl", elog);
  } else {
    enc = load_encoder<float>(enc_ckpt);
    std::cout << "loaded encoder checkpoint " << enc_ckpt << "\n";
  }

  std::cout << "training hypernetwork (" << tcfg.steps << " steps, T=" << tcfg.refinement_steps
            << ", lr=" << tcfg.learning_rate << ", batch=" << tcfg.batch_size << ")\n";
  TrainLog log = train_hypernetwork(data, g, enc, h, tcfg);
  append_train_log_jsonl(out / "train_log.jsonl", log);

  save_generator(out / "generator", g);
  save_encoder(out / "encoder", enc);
  save_hypernet(out / "hypernet", h);

  std::vector<double> last_l2;
  if (!log.steps.empty())
    for (const auto& t : log.steps.back().refine_losses) last_l2.push_back(t.l2);
  write_metrics(out / "metrics.json", last_l2, seconds_since(t0), cfg);
  std::cout << "checkpoints written to " << out.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// invert
// ---------------------------------------------------------------------------

int cmd_invert(const std::string& ckpt, const std::vector<std::string>& images, int64_t sample_n,
               int64_t steps, const std::string& out_dir, bool compare_baselines,
               int64_t seed_arg) {
  fs::path cp(ckpt);
  Generator<float> g = load_generator<float>(cp / "generator");
  LatentEncoder<float> enc = load_encoder<float>(cp / "encoder");
  HyperNet<float> h = load_hypernet<float>(cp / "hypernet");
  uint64_t seed = seed_arg >= 0 ? static_cast<uint64_t>(seed_arg) : 0;
  Tensor<float> x = gather_inputs(g, images, sample_n, seed);

  auto t0 = Clock::now();
  InversionResult<float> res = invert(x, g, enc, h, steps);
  double hyper_seconds = seconds_since(t0);

  fs::path out(out_dir);
  fs::create_directories(out);
  write_png(out / "inputs.png", image_grid(x, grid_cols(x.shape()[0])));
  write_png(out / "reconstructions.png", image_grid(res.reconstruction, grid_cols(x.shape()[0])));
  save_tensor(out / "latents.bin", res.w);
  save_offsets(out / "offsets", res.offsets);

  json hashed = {{"checkpoint", ckpt}, {"steps", steps}, {"seed", seed}, {"n", x.shape()[0]}};
  json extra;
  std::cout << "per-step L2:";
  for (double d : res.per_step_distortion) std::cout << " " << d;
  std::cout << "\n";

  if (compare_baselines) {
    int64_t n = x.shape()[0];
    LossModel<float> lm;
    double hyper_l2 = res.per_step_distortion.back();

    auto t1 = Clock::now();
    std::vector<double> trace;
    Tensor<float> w_opt = optimize_latent(x, g, 500, 5e-2, nullptr, seed, &trace);
    double opt_seconds = seconds_since(t1);
    double opt_l2 = lm.l2_value(x, g.synthesize(Var<float>::constant(w_opt)).value());

    auto t2 = Clock::now();
    double ft_l2_total = 0;
    for (int64_t i = 0; i < n; ++i) {
      Tensor<float> xi = slice_rows(x, {i});
      Tensor<float> wi = slice_rows(res.w, {i});
      Generator<float> tuned = finetune_generator(xi, g, wi, 200, 2e-3);
      ft_l2_total +=
          lm.l2_value(xi, tuned.synthesize(Var<float>::constant(wi)).value());
    }
    double ft_seconds = seconds_since(t2);
    double ft_l2 = ft_l2_total / static_cast<double>(n);

    double per_img_hyper = hyper_seconds / static_cast<double>(n);
    double per_img_ft = ft_seconds / static_cast<double>(n);
    std::cout << "method               mean L2      sec/image\n";
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%-20s %-12.6f %.3f\n", "hypernetwork", hyper_l2,
                  per_img_hyper);
    std::cout << buf;
    std::snprintf(buf, sizeof(buf), "%-20s %-12.6f %.3f\n", "latent_optimization", opt_l2,
                  opt_seconds / static_cast<double>(n));
    std::cout << buf;
    std::snprintf(buf, sizeof(buf), "%-20s %-12.6f %.3f\n", "finetune_generator", ft_l2,
                  per_img_ft);
    std::cout << buf;
    extra["baselines"] = {{"hypernetwork", {{"l2", hyper_l2}, {"sec_per_image", per_img_hyper}}},
                          {"latent_optimization",
                           {{"l2", opt_l2}, {"sec_per_image", opt_seconds / double(n)}}},
                          {"finetune_generator",
                           {{"l2", ft_l2}, {"sec_per_image", per_img_ft}}}};
  }

  write_metrics(out / "metrics.json", res.per_step_distortion, seconds_since(t0), hashed, extra);
  std::cout << "results written to " << out.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// edit
// ---------------------------------------------------------------------------

int cmd_edit(const std::string& ckpt, const std::vector<std::string>& images, int64_t sample_n,
             int64_t steps, const std::string& directions_path, int64_t pca_components,
             const std::vector<double>& strengths, const std::string& out_dir, int64_t seed_arg) {
  check_config(!strengths.empty(), "need at least one --strength");
  fs::path cp(ckpt);
  Generator<float> g = load_generator<float>(cp / "generator");
  LatentEncoder<float> enc = load_encoder<float>(cp / "encoder");
  HyperNet<float> h = load_hypernet<float>(cp / "hypernet");
  uint64_t seed = seed_arg >= 0 ? static_cast<uint64_t>(seed_arg) : 0;
  Tensor<float> x = gather_inputs(g, images, sample_n, seed);

  auto t0 = Clock::now();
  std::vector<EditDirection<float>> dirs;
  if (!directions_path.empty()) {
    dirs = load_directions<float>(directions_path);
  } else {
    check_config(pca_components >= 1, "need --directions FILE or --pca N");
    PcaDirections<float> pca = discover_directions_pca(g, 256, pca_components, seed);
    dirs = std::move(pca.directions);
  }
  for (const auto& d : dirs)
    check_shape(d.vector.shape()[0] == g.spec().latent_dim,
                "direction " + d.name + " does not match the generator latent dim");

  InversionResult<float> res = invert(x, g, enc, h, steps);
  // One row per direction, one column per strength, for the first input.
  InversionResult<float> first;
  first.w = slice_rows(res.w, {0});
  first.offsets = slice_sample_offsets(res.offsets, 0);
  first.reconstruction = slice_rows(res.reconstruction, {0});

  int64_t rows = static_cast<int64_t>(dirs.size());
  int64_t cols = static_cast<int64_t>(strengths.size());
  int64_t r = g.spec().output_resolution();
  Tensor<float> cells(Shape{rows * cols, r, r, 3});
  int64_t cell = r * r * 3;
  for (int64_t i = 0; i < rows; ++i) {
    for (int64_t j = 0; j < cols; ++j) {
      Tensor<float> img =
          apply_edit(first, dirs[static_cast<size_t>(i)], static_cast<float>(strengths[j]), g);
      std::copy(img.data(), img.data() + cell, cells.data() + (i * cols + j) * cell);
    }
  }
  fs::path out(out_dir);
  fs::create_directories(out);
  write_png(out / "edit_grid.png", image_grid(cells, cols));
  save_directions(out / "directions.json", dirs);
  write_png(out / "inputs.png", image_grid(x, grid_cols(x.shape()[0])));

  json hashed = {{"checkpoint", ckpt},
                 {"steps", steps},
                 {"seed", seed},
                 {"strengths", strengths},
                 {"directions", static_cast<int64_t>(dirs.size())}};
  write_metrics(out / "metrics.json", res.per_step_distortion, seconds_since(t0), hashed,
                {{"grid_rows", rows}, {"grid_cols", cols}});
  std::cout << "edit grid (" << rows << " directions x " << cols << " strengths) written to "
            << out.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// adapt
// ---------------------------------------------------------------------------

int cmd_adapt(const std::string& inversion_dir, const std::string& target_ckpt,
              const std::string& out_dir) {
  fs::path inv(inversion_dir);
  OffsetTensors<float> offsets = load_offsets<float>(inv / "offsets");
  Tensor<float> w = load_tensor<float>(inv / "latents.bin");
  fs::path tp(target_ckpt);
  if (fs::exists(tp / "generator")) tp /= "generator";
  Generator<float> target = load_generator<float>(tp);
  check_shape(w.shape().size() == 2 && w.shape()[1] == target.spec().latent_dim,
              "saved latents do not match the target generator");

  auto t0 = Clock::now();
  int64_t n = w.shape()[0];
  int64_t r = target.spec().output_resolution();
  Tensor<float> out_imgs(Shape{n, r, r, 3});
  int64_t cell = r * r * 3;
  for (int64_t i = 0; i < n; ++i) {
    OffsetTensors<float> oi = slice_sample_offsets(offsets, i);
    Generator<float> adapted = transfer_offsets(oi, target);
    Tensor<float> wi = slice_rows(w, {i});
    Tensor<float> yi = adapted.synthesize(Var<float>::constant(wi)).value();
    std::copy(yi.data(), yi.data() + cell, out_imgs.data() + i * cell);
  }

  fs::path out(out_dir);
  fs::create_directories(out);
  write_png(out / "adapted.png", image_grid(out_imgs, grid_cols(n)));
  save_tensor(out / "adapted.bin", out_imgs);
  json hashed = {{"inversion", inversion_dir}, {"target", target_ckpt}};
  write_metrics(out / "metrics.json", {}, seconds_since(t0), hashed,
                {{"images", n}});
  std::cout << "adapted renders written to " << out.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hypernetwork-driven generator inversion toolkit"};
  app.require_subcommand(1);

  // count-params
  auto* cp = app.add_subcommand("count-params", "analytic hypernetwork parameter accounting");
  std::string cp_spec;
  int64_t cp_res = 16, cp_base = 8, cp_backbone = 512, cp_shared_fc = 512;
  std::string cp_heads = "shared_mix", cp_layers = "medium_fine_conv", cp_json;
  bool cp_compare = false;
  cp->add_option("--spec", cp_spec, "builtin name (stylegan2-1024) or spec JSON path");
  cp->add_option("--resolution", cp_res, "toy generator resolution");
  cp->add_option("--base-channels", cp_base, "toy generator base channel count");
  cp->add_option("--heads", cp_heads,
                 "head variant: naive | per_channel | shared_mix | per_channel_shared_mix | "
                 "separable");
  cp->add_option("--layers", cp_layers,
                 "refined layers: medium_fine_conv | all_conv | all_including_torgb | none");
  cp->add_option("--backbone-width", cp_backbone, "backbone feature width");
  cp->add_option("--shared-fc-dim", cp_shared_fc, "shared head fc dimension");
  cp->add_flag("--compare", cp_compare, "also print every head variant's total");
  cp->add_option("--json", cp_json, "write the report to this JSON file");

  // train
  auto* tr = app.add_subcommand("train", "pretrain the encoder, then train the hypernetwork");
  std::string tr_config, tr_out;
  int64_t tr_seed = -1;
  bool tr_dry = false;
  tr->add_option("--config", tr_config, "experiment config JSON")->required();
  tr->add_option("--out", tr_out, "output directory (overrides config output_dir)");
  tr->add_option("--seed", tr_seed, "seed override");
  tr->add_flag("--dry-run", tr_dry, "validate config and print parameter counts only");

  // invert
  auto* iv = app.add_subcommand("invert", "reconstruct images through iterative refinement");
  std::string iv_ckpt, iv_out = "inversion";
  std::vector<std::string> iv_images;
  int64_t iv_sample = 0, iv_steps = 5, iv_seed = -1;
  bool iv_compare = false;
  iv->add_option("--checkpoint", iv_ckpt, "training output directory")->required();
  iv->add_option("--images", iv_images, "input PNGs at the generator resolution");
  iv->add_option("--sample", iv_sample, "instead sample N inputs from the generator");
  iv->add_option("--steps,-T", iv_steps, "refinement step count");
  iv->add_option("--out", iv_out, "output directory");
  iv->add_option("--seed", iv_seed, "sampling seed");
  iv->add_flag("--compare-baselines", iv_compare,
               "also run latent optimization and per-image fine-tuning");

  // edit
  auto* ed = app.add_subcommand("edit", "latent-direction edit sweeps on inverted images");
  std::string ed_ckpt, ed_out = "edits", ed_directions;
  std::vector<std::string> ed_images;
  std::vector<double> ed_strengths;
  int64_t ed_sample = 1, ed_steps = 5, ed_pca = 0, ed_seed = -1;
  ed->add_option("--checkpoint", ed_ckpt, "training output directory")->required();
  ed->add_option("--images", ed_images, "input PNGs at the generator resolution");
  ed->add_option("--sample", ed_sample, "instead sample N inputs from the generator");
  ed->add_option("--steps,-T", ed_steps, "refinement step count");
  ed->add_option("--directions", ed_directions, "JSON file of named directions");
  ed->add_option("--pca", ed_pca, "discover this many directions by latent PCA");
  ed->add_option("--strengths", ed_strengths, "edit strengths, one column each")
      ->delimiter(',');
  ed->add_option("--out", ed_out, "output directory");
  ed->add_option("--seed", ed_seed, "sampling seed");

  // adapt
  auto* ad = app.add_subcommand("adapt", "re-render an inversion through another generator");
  std::string ad_inv, ad_target, ad_out = "adapted";
  ad->add_option("--inversion", ad_inv, "inversion output directory (offsets + latents)")
      ->required();
  ad->add_option("--target", ad_target, "target generator checkpoint directory")->required();
  ad->add_option("--out", ad_out, "output directory");

  try {
    app.parse(argc, argv);
    check_device();
    if (cp->parsed())
      return cmd_count_params(cp_spec, cp_res, cp_base, cp_heads, cp_layers, cp_backbone,
                              cp_shared_fc, cp_compare, cp_json);
    if (tr->parsed()) return cmd_train(tr_config, tr_out, tr_seed, tr_dry);
    if (iv->parsed())
      return cmd_invert(iv_ckpt, iv_images, iv_sample, iv_steps, iv_out, iv_compare, iv_seed);
    if (ed->parsed())
      return cmd_edit(ed_ckpt, ed_images, ed_sample, ed_steps, ed_directions, ed_pca,
                      ed_strengths, ed_out, ed_seed);
    if (ad->parsed()) return cmd_adapt(ad_inv, ad_target, ad_out);
    return 2;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    app.exit(e);
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const ShapeError& e) {
    std::cerr << "shape error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
