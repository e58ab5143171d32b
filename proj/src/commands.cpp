#include "slotgen/harness/commands.hpp"

#include "slotgen/core/errors.hpp"
#include "slotgen/core/plot.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace slotgen::harness {

namespace {

std::string fmt(real v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void append_metrics_line(std::ofstream& log, int step, const train::LossBreakdown& b) {
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "step=%d l_dm=%.17g l_cl=%.17g l_total=%.17g grad_norm=%.17g lr=%.17g\n",
                step, b.l_dm, b.l_cl, b.l_total, b.grad_norm, b.lr);
  log << buf;
  log.flush();
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::string tok;
  std::istringstream ss(s);
  while (std::getline(ss, tok, ','))
    if (!tok.empty()) out.push_back(tok);
  return out;
}

}  // namespace

std::string default_out_root() {
  if (const char* env = std::getenv("SLOTGEN_OUT")) return env;
  return "out";
}

std::string cmd_data(const ExperimentConfig& config, const std::string& out_dir) {
  // Train and eval splits live side by side with disjoint seed ranges.
  const auto manifest = scene::generate_dataset(config.dataset.spec, config.dataset.count,
                                                config.dataset.seed, out_dir + "/train");
  scene::generate_dataset(config.dataset.spec, config.dataset.eval_count,
                          config.dataset.seed + 0x100000, out_dir + "/eval");
  std::ofstream snap(out_dir + "/config.cfg");
  snap << serialize_config(config);
  std::printf("dataset: %d train + %d eval scenes at %s (checksum %016llx)\n",
              config.dataset.count, config.dataset.eval_count, out_dir.c_str(),
              static_cast<unsigned long long>(scene::manifest_checksum(manifest)));
  return out_dir + "/train/manifest";
}

std::vector<ImageU8> load_training_images(const std::string& data_dir) {
  const auto manifest = scene::load_manifest(data_dir);
  std::vector<ImageU8> images(static_cast<size_t>(manifest.count));
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < manifest.count; ++i)
    images[static_cast<size_t>(i)] =
        read_raster(data_dir + "/" + manifest.scene_dirs[static_cast<size_t>(i)] + "/image");
  return images;
}

TrainResult cmd_train(const ExperimentConfig& config_in, const std::string& data_dir,
                      const std::string& out_dir, uint64_t train_seed,
                      const std::string& resume_path) {
  fs::create_directories(out_dir);
  ExperimentConfig config = config_in;
  std::unique_ptr<model::Pipeline> pipe;
  int start_step = 0;
  std::unique_ptr<train::Trainer> trainer;

  if (!resume_path.empty()) {
    Checkpoint ck = load_checkpoint(resume_path);
    config = ck.config;
    train_seed = ck.train_seed;
    start_step = ck.step;
    pipe = std::move(ck.pipeline);
    trainer = std::make_unique<train::Trainer>(*pipe, config.to_train_config(), train_seed);
    trainer->adam_state() = std::move(ck.adam);
    trainer->adam_steps() = ck.adam_steps;
  } else {
    model::ModelConfig mc = config.to_model_config();
    mc.init_seed = mix_seed(train_seed, config.model.init_seed);
    pipe = std::make_unique<model::Pipeline>(mc);
    trainer = std::make_unique<train::Trainer>(*pipe, config.to_train_config(), train_seed);
  }

  const auto dataset = load_training_images(data_dir);
  if (dataset.empty()) throw ValidationError("training dataset is empty: " + data_dir);

  std::ofstream snap(out_dir + "/config.cfg");
  snap << serialize_config(config);
  std::ofstream log(out_dir + "/metrics.log", start_step == 0 ? std::ios::trunc : std::ios::app);

  TrainResult result;
  result.init_checkpoint = out_dir + "/checkpoint_init";
  if (start_step == 0)
    save_checkpoint(result.init_checkpoint, config, 0, train_seed, *pipe,
                    trainer->adam_state(), trainer->adam_steps());

  std::vector<real> curve_steps, curve_dm, curve_total;
  const int total = config.optimizer.total_steps;
  for (int step = start_step; step < total; ++step) {
    const auto b = trainer->step(dataset, step);
    result.last = b;
    if (step % config.optimizer.log_every == 0 || step + 1 == total) {
      append_metrics_line(log, step, b);
      curve_steps.push_back(step);
      curve_dm.push_back(b.l_dm);
      curve_total.push_back(b.l_total);
    }
    if (config.optimizer.checkpoint_every > 0 &&
        (step + 1) % config.optimizer.checkpoint_every == 0)
      save_checkpoint(out_dir + "/checkpoint_last", config, step + 1, train_seed, *pipe,
                      trainer->adam_state(), trainer->adam_steps());
  }
  result.final_checkpoint = out_dir + "/checkpoint_final";
  save_checkpoint(result.final_checkpoint, config, total, train_seed, *pipe,
                  trainer->adam_state(), trainer->adam_steps());
  result.steps_run = total - start_step;

  if (!curve_steps.empty()) {
    plot_lines(out_dir + "/loss_curve.ppm",
               {{"l_dm", curve_steps, curve_dm}, {"l_total", curve_steps, curve_total}});
  }
  return result;
}

EvalResult cmd_eval(const std::string& checkpoint_path, const std::string& data_dir,
                    const std::string& out_dir, const std::string& metric_list,
                    int eval_seeds, uint64_t eval_seed, bool with_probes,
                    bool with_attention) {
  fs::create_directories(out_dir);
  Checkpoint ck = load_checkpoint(checkpoint_path);
  model::Pipeline& pipe = *ck.pipeline;
  const auto manifest = scene::load_manifest(data_dir);
  const auto scenes = scene::load_all(manifest);
  if (scenes.empty()) throw ValidationError("no scenes to evaluate in " + data_dir);

  EvalResult res;
  const auto wanted = split_csv(metric_list);
  const bool have_classes = !scenes.front().properties.empty();

  for (const auto& metric : wanted) {
    const bool needs_classes = metric == "mbo_c" || metric == "miou_c";
    if (needs_classes && !have_classes) {
      res.warnings.push_back("metric " + metric + " skipped: no class ground truth");
      continue;
    }
    if (metric != "fg_ari" && metric != "mbo_i" && metric != "mbo_c" && metric != "miou_i" &&
        metric != "miou_c") {
      res.warnings.push_back("metric " + metric + " skipped: unknown");
      continue;
    }
    res.per_seed[metric] = {};
  }

  for (int sj = 0; sj < eval_seeds; ++sj) {
    std::map<std::string, real> totals;
    for (size_t si = 0; si < scenes.size(); ++si) {
      const auto& sc = scenes[si];
      const uint64_t seed = mix_seed(mix_seed(eval_seed, static_cast<uint64_t>(sj)), si);
      const metrics::Partition pred = metrics::predict_partition(pipe, sc, seed);
      const metrics::Partition gt = metrics::gt_partition(sc);
      const auto class_of = metrics::gt_class_of(sc);
      for (auto& [metric, v] : res.per_seed) {
        real value = 0;
        if (metric == "fg_ari") value = metrics::fg_ari(pred, gt).value;
        else if (metric == "mbo_i") value = metrics::mbo(pred, gt, metrics::Level::kInstance);
        else if (metric == "mbo_c") value = metrics::mbo(pred, gt, metrics::Level::kClass, class_of);
        else if (metric == "miou_i") value = metrics::miou(pred, gt, metrics::Level::kInstance);
        else if (metric == "miou_c") value = metrics::miou(pred, gt, metrics::Level::kClass, class_of);
        totals[metric] += value;
      }
    }
    for (auto& [metric, v] : res.per_seed)
      v.push_back(totals[metric] / static_cast<real>(scenes.size()));
  }
  for (auto& [metric, v] : res.per_seed) {
    real mean = 0;
    for (real x : v) mean += x;
    res.mean[metric] = mean / static_cast<real>(v.size());
  }

  std::ofstream seg(out_dir + "/segmentation.txt");
  seg << "# metric per-seed... mean\n";
  for (const auto& [metric, v] : res.per_seed) {
    seg << metric;
    for (real x : v) seg << " " << fmt(x);
    seg << " mean=" << fmt(res.mean[metric]) << "\n";
  }
  for (const auto& w : res.warnings) seg << "warning: " << w << "\n";

  if (with_probes) {
    const auto probe_data = metrics::collect_probe_dataset(pipe, scenes, eval_seed);
    std::ofstream pf(out_dir + "/probes.txt");
    for (const std::string prop : {"shape", "color", "position", "size"}) {
      const auto rep = metrics::probe_fit_eval(probe_data, prop, {}, eval_seed);
      res.probes.push_back(rep);
      pf << prop << (rep.categorical ? " accuracy=" + fmt(rep.accuracy)
                                     : " mse=" + fmt(rep.mse) + " constant_baseline_mse=" +
                                           fmt(rep.constant_baseline_mse))
         << " train_rows=" << rep.train_rows << " test_rows=" << rep.test_rows
         << (rep.degenerate_labels ? " degenerate_labels=1" : "") << "\n";
    }
  }

  // Predicted masks for a handful of scenes, in the dataset's raster format.
  fs::create_directories(out_dir + "/masks");
  for (size_t si = 0; si < std::min<size_t>(8, scenes.size()); ++si) {
    const auto pred = metrics::predict_partition(pipe, scenes[si], mix_seed(eval_seed, si));
    ImageU8 mask(pred.w, pred.h, 1);
    for (size_t i = 0; i < pred.labels.size(); ++i)
      mask.pixels[i] = static_cast<uint8_t>(pred.labels[i]);
    write_raster(mask, out_dir + "/masks/scene_" + std::to_string(si) + "_pred");
  }

  if (with_attention) {
    std::vector<scene::Scene> sample(scenes.begin(),
                                     scenes.begin() + std::min<size_t>(8, scenes.size()));
    res.attention = metrics::attention_mass_report(pipe, sample,
                                                   {0.1, 0.3, 0.5, 0.7, 0.9}, eval_seed);
    std::ofstream af(out_dir + "/attention_mass.txt");
    af << "# layer register_fraction\n";
    for (size_t i = 0; i < res.attention.layer_names.size(); ++i)
      af << res.attention.layer_names[i] << " " << fmt(res.attention.register_fraction[i])
         << "\n";
    if (res.attention.per_token_mass.numel() > 0)
      plot_heatmap(out_dir + "/attention_mass.ppm", res.attention.per_token_mass);
  }
  return res;
}

metrics::GenerationReport cmd_generate(const std::string& checkpoint_path,
                                       const std::string& data_dir,
                                       const std::string& out_dir,
                                       const GenerateOptions& opts, uint64_t seed) {
  fs::create_directories(out_dir);
  Checkpoint ck = load_checkpoint(checkpoint_path);
  model::Pipeline& pipe = *ck.pipeline;
  const auto manifest = scene::load_manifest(data_dir);
  auto scenes = scene::load_all(manifest);
  if (scenes.empty()) throw ValidationError("no scenes in " + data_dir);
  const int n = pipe.cfg.slots.n_slots;
  if (static_cast<int>(scenes.size()) > opts.scene_count && opts.mode != "edit")
    scenes.resize(static_cast<size_t>(opts.scene_count));

  metrics::GenerationReport rep;
  if (opts.mode == "reconstruction") {
    rep = metrics::generation_eval(pipe, scenes, metrics::GenerationMode::kReconstruction,
                                   opts.cfg_w, opts.steps, seed, out_dir);
  } else if (opts.mode == "compositional") {
    rep = metrics::generation_eval(pipe, scenes, metrics::GenerationMode::kCompositional,
                                   opts.cfg_w, opts.steps, seed, out_dir);
  } else if (opts.mode == "single_slot") {
    rep = metrics::generation_eval(pipe, scenes, metrics::GenerationMode::kSingleSlot,
                                   opts.cfg_w, opts.steps, seed, out_dir);
  } else if (opts.mode == "edit") {
    for (int ix : opts.drop_indices)
      if (ix < 0 || ix >= n)
        throw ValidationError("slot index " + std::to_string(ix) + " out of range [0, " +
                              std::to_string(n - 1) + "]");
    for (int ix : opts.swap_indices)
      if (ix < 0 || ix >= n)
        throw ValidationError("slot index " + std::to_string(ix) + " out of range [0, " +
                              std::to_string(n - 1) + "]");
    const auto& sa = scenes.at(static_cast<size_t>(opts.scene_a));
    const Tensor slots_a = metrics::scene_slots(pipe, sa, mix_seed(seed, 1));
    const Tensor null_rows =
        pipe.denoiser->null_semantic_tokens(1, n)->value.reshaped({n, pipe.cfg.slots.slot_dim});

    const Tensor recon = train::signal_to_image_hw3(
        metrics::sample_from_slots(pipe, slots_a, opts.cfg_w, opts.steps, mix_seed(seed, 7)));
    write_raster(to_u8(recon), out_dir + "/reconstruction.ppm");
    write_raster(to_u8(sa.image), out_dir + "/input.ppm");

    Tensor edited = slots_a;
    if (!opts.drop_indices.empty()) {
      for (int ix : opts.drop_indices)
        for (int j = 0; j < pipe.cfg.slots.slot_dim; ++j) edited.at(ix, j) = null_rows.at(ix, j);
    }
    if (!opts.swap_indices.empty()) {
      const auto& sb = scenes.at(static_cast<size_t>(opts.scene_b));
      const Tensor slots_b = metrics::scene_slots(pipe, sb, mix_seed(seed, 1));
      for (int ix : opts.swap_indices)
        for (int j = 0; j < pipe.cfg.slots.slot_dim; ++j) edited.at(ix, j) = slots_b.at(ix, j);
      write_raster(to_u8(sb.image), out_dir + "/input_b.ppm");
    }
    const Tensor edited_img = train::signal_to_image_hw3(
        metrics::sample_from_slots(pipe, edited, opts.cfg_w, opts.steps, mix_seed(seed, 7)));
    write_raster(to_u8(edited_img), out_dir + "/edited.ppm");
    rep.mode = "edit";
    rep.images = 2;
  } else {
    throw ValidationError("unknown generate mode: " + opts.mode);
  }
  std::ofstream rf(out_dir + "/report.txt");
  rf << "mode = " << rep.mode << "\nimages = " << rep.images
     << "\npixel_mse = " << fmt(rep.pixel_mse)
     << "\nfeature_distance = " << fmt(rep.feature_distance) << "\n";
  return rep;
}

MiCheckResult cmd_mi_check(const std::vector<real>& rhos, int dim, real tolerance,
                           const std::string& out_dir, const mi::QuadratureSpec& quad,
                           int mc_samples, uint64_t seed) {
  fs::create_directories(out_dir);
  MiCheckResult res;
  std::vector<Series> curves;
  for (const real rho : rhos) {
    const mi::MIReport rep = mi::verify_corollary({dim, rho}, tolerance, quad, mc_samples, seed);
    res.reports.push_back(rep);
    res.all_passed = res.all_passed && rep.passed;
    char name[64];
    std::snprintf(name, sizeof(name), "mi_rho_%g.txt", rho);
    std::ofstream f(out_dir + "/" + name);
    mi::write_report(rep, f);
    Series s;
    s.name = name;
    for (const auto& [g, v] : mi::integrand_curve({dim, rho}, quad)) {
      s.x.push_back(g);
      s.y.push_back(v);
    }
    curves.push_back(std::move(s));
  }
  plot_lines(out_dir + "/mi_integrand.ppm", curves);
  return res;
}

std::vector<SweepRow> run_sweep(const ExperimentConfig& base, const std::string& data_dir,
                                const std::string& eval_dir, const std::string& out_dir,
                                const std::string& param, const std::vector<real>& values,
                                uint64_t train_seed) {
  std::vector<SweepRow> rows;
  for (const real v : values) {
    ExperimentConfig cfg = base;
    if (param == "lambda_cl") cfg.objective.lambda_cl = v;
    else if (param == "negative_ratio") cfg.objective.negative_ratio = v;
    else throw ValidationError("unknown sweep parameter: " + param);
    const std::string run_dir = out_dir + "/sweep_" + param + "_" + fmt(v);
    const auto tr = cmd_train(cfg, data_dir, run_dir, train_seed);
    const auto ev = cmd_eval(tr.final_checkpoint, eval_dir, run_dir + "/eval",
                             cfg.eval.metrics, cfg.eval.eval_seeds, cfg.seeds.eval,
                             /*probes=*/false, /*attention=*/false);
    SweepRow row;
    row.label = param + "=" + fmt(v);
    row.metrics = ev.mean;
    rows.push_back(std::move(row));
  }
  std::ofstream tf(out_dir + "/sweep_" + param + ".txt");
  for (const auto& row : rows) {
    tf << row.label;
    for (const auto& [k, v] : row.metrics) tf << " " << k << "=" << fmt(v);
    tf << "\n";
  }
  return rows;
}

std::vector<SweepRow> run_ablation(const ExperimentConfig& base, const std::string& data_dir,
                                   const std::string& eval_dir, const std::string& out_dir,
                                   const std::vector<uint64_t>& seeds, bool full_grid) {
  // Default: the three-step trend {baseline, +registers, +registers+contrastive}.
  // full_grid additionally toggles the restricted-finetuning freeze, giving the
  // eight-row registers x freeze x contrastive table.
  struct Variant {
    std::string label;
    int registers;
    real lambda;
    std::string freeze;
  };
  std::vector<Variant> variants;
  if (full_grid) {
    for (const int reg : {0, base.model.register_count})
      for (const char* freeze : {"non_cross_attention", "none"})
        for (const real lambda : {real(0), base.objective.lambda_cl}) {
          Variant v;
          v.label = std::string(reg ? "reg1" : "reg0") +
                    (std::string(freeze) == "none" ? "_ca1" : "_ca0") +
                    (lambda > 0 ? "_co1" : "_co0");
          v.registers = reg;
          v.lambda = lambda;
          v.freeze = freeze;
          variants.push_back(v);
        }
  } else {
    variants = {{"baseline", 0, 0.0, base.objective.freeze},
                {"registers", base.model.register_count, 0.0, base.objective.freeze},
                {"registers_contrastive", base.model.register_count,
                 base.objective.lambda_cl, base.objective.freeze}};
  }
  std::vector<SweepRow> rows;
  for (const auto& var : variants) {
    SweepRow row;
    row.label = var.label;
    std::map<std::string, real> acc;
    for (const uint64_t seed : seeds) {
      ExperimentConfig cfg = base;
      cfg.model.register_count = var.registers;
      cfg.objective.lambda_cl = var.lambda;
      cfg.objective.freeze = var.freeze;
      const std::string run_dir =
          out_dir + "/ablation_" + var.label + "_seed" + std::to_string(seed);
      const auto tr = cmd_train(cfg, data_dir, run_dir, seed);
      const auto ev = cmd_eval(tr.final_checkpoint, eval_dir, run_dir + "/eval",
                               cfg.eval.metrics, cfg.eval.eval_seeds, cfg.seeds.eval,
                               false, false);
      for (const auto& [k, v] : ev.mean) acc[k] += v;
    }
    for (auto& [k, v] : acc) v /= static_cast<real>(seeds.size());
    row.metrics = acc;
    rows.push_back(std::move(row));
  }
  std::ofstream tf(out_dir + "/ablation.txt");
  tf << "# Reg / CO grid, seed-averaged\n";
  for (const auto& row : rows) {
    tf << row.label;
    for (const auto& [k, v] : row.metrics) tf << " " << k << "=" << fmt(v);
    tf << "\n";
  }
  return rows;
}

}  // namespace slotgen::harness
