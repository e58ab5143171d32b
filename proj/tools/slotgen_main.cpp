// slotgen: slot-attention diffusion toolkit.
//   data      generate a sprite dataset (train + eval splits)
//   train     train a model (single run, parameter sweep, or ablation grid)
//   eval      segmentation metrics, property probes, attention-mass report
//   generate  reconstruction / compositional / single-slot grids and edits
//   mi-check  numerical verification of the denoising-gap identity
#include "CLI11.hpp"

#include "slotgen/core/errors.hpp"
#include "slotgen/harness/commands.hpp"

#include <cstdio>
#include <iostream>

using namespace slotgen;
using namespace slotgen::harness;

namespace {

ExperimentConfig config_or_default(const std::string& path) {
  if (path.empty()) return ExperimentConfig{};
  return load_config(path);
}

std::vector<real> parse_reals(const std::string& csv) {
  std::vector<real> out;
  std::string tok;
  std::istringstream ss(csv);
  while (std::getline(ss, tok, ','))
    if (!tok.empty()) out.push_back(std::stod(tok));
  return out;
}

std::vector<int> parse_ints(const std::string& csv) {
  std::vector<int> out;
  for (real v : parse_reals(csv)) out.push_back(static_cast<int>(v));
  return out;
}

std::vector<uint64_t> parse_seeds(const std::string& csv) {
  std::vector<uint64_t> out;
  std::string tok;
  std::istringstream ss(csv);
  while (std::getline(ss, tok, ','))
    if (!tok.empty()) out.push_back(std::stoull(tok));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"slot-attention diffusion toolkit"};
  app.require_subcommand(1);

  std::string config_path, out_dir, data_dir, ckpt, resume;
  uint64_t seed = 0;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "experiment config file");
    cmd->add_option("--out", out_dir, "output directory (default $SLOTGEN_OUT or ./out)");
    cmd->add_option("--seed", seed, "seed override");
  };

  auto* data = app.add_subcommand("data", "generate a sprite dataset");
  add_common(data);

  auto* tr = app.add_subcommand("train", "train a model");
  add_common(tr);
  tr->add_option("--data", data_dir, "dataset root (directory with train/ and eval/)")
      ->required();
  tr->add_option("--resume", resume, "checkpoint to resume from");
  std::string sweep_lambda, sweep_ratio, ablation_seeds;
  tr->add_option("--sweep-lambda", sweep_lambda, "comma list of lambda_cl values");
  tr->add_option("--sweep-ratio", sweep_ratio, "comma list of negative ratios");
  bool ablation_flag = false;
  tr->add_flag("--ablation", ablation_flag, "run the baseline/registers/contrastive grid");
  bool ablation_full = false;
  tr->add_flag("--ablation-full", ablation_full,
               "run the full registers x freeze x contrastive grid");
  tr->add_option("--seeds", ablation_seeds, "comma list of seeds for the ablation grid");

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(ev);
  ev->add_option("--ckpt", ckpt, "checkpoint file")->required();
  ev->add_option("--data", data_dir, "eval dataset directory")->required();
  std::string metric_list = "fg_ari,mbo_i,mbo_c,miou_i,miou_c";
  int eval_seeds = 0;
  ev->add_option("--metrics", metric_list, "comma list of metrics");
  ev->add_option("--eval-seeds", eval_seeds, "number of evaluation seeds");
  bool no_probes = false, no_attention = false;
  ev->add_flag("--no-probes", no_probes, "skip property probes");
  ev->add_flag("--no-attention", no_attention, "skip the attention-mass report");

  auto* gen = app.add_subcommand("generate", "sample images from a checkpoint");
  add_common(gen);
  gen->add_option("--ckpt", ckpt, "checkpoint file")->required();
  gen->add_option("--data", data_dir, "dataset directory supplying scenes")->required();
  GenerateOptions gopts;
  gen->add_option("--mode", gopts.mode, "reconstruction|compositional|single_slot|edit");
  gen->add_option("--cfg-w", gopts.cfg_w, "classifier-free guidance weight");
  gen->add_option("--steps", gopts.steps, "sampling steps");
  gen->add_option("--scenes", gopts.scene_count, "number of scenes");
  gen->add_option("--scene-a", gopts.scene_a, "edit: source scene index");
  gen->add_option("--scene-b", gopts.scene_b, "edit: partner scene index (swap)");
  std::string drop_csv, swap_csv;
  gen->add_option("--drop", drop_csv, "edit: slot indices to drop");
  gen->add_option("--swap", swap_csv, "edit: slot indices to swap from scene-b");

  auto* mi = app.add_subcommand("mi-check", "verify the denoising-gap identity");
  add_common(mi);
  std::string rho_csv = "0,0.3,0.5,0.8";
  int mi_dim = 1, mi_nodes = 2001, mc_samples = 100000;
  real mi_tol = 1e-2, mi_lo = -15, mi_hi = 15;
  mi->add_option("--rho", rho_csv, "comma list of correlations");
  mi->add_option("--dim", mi_dim, "coordinates per variable");
  mi->add_option("--tol", mi_tol, "absolute tolerance on delta");
  mi->add_option("--nodes", mi_nodes, "quadrature nodes");
  mi->add_option("--gamma-lo", mi_lo, "lower quadrature bound");
  mi->add_option("--gamma-hi", mi_hi, "upper quadrature bound");
  mi->add_option("--mc-samples", mc_samples, "Monte Carlo cross-check samples");

  CLI11_PARSE(app, argc, argv);

  try {
    if (out_dir.empty()) out_dir = default_out_root();

    if (data->parsed()) {
      const auto cfg = config_or_default(config_path);
      cmd_data(cfg, out_dir);
      return 0;
    }

    if (tr->parsed()) {
      auto cfg = config_or_default(config_path);
      if (tr->count("--seed")) cfg.seeds.train = seed;
      const std::string train_dir = data_dir + "/train";
      const std::string eval_dir = data_dir + "/eval";
      if (!sweep_lambda.empty()) {
        run_sweep(cfg, train_dir, eval_dir, out_dir, "lambda_cl", parse_reals(sweep_lambda),
                  cfg.seeds.train);
      } else if (!sweep_ratio.empty()) {
        run_sweep(cfg, train_dir, eval_dir, out_dir, "negative_ratio",
                  parse_reals(sweep_ratio), cfg.seeds.train);
      } else if (ablation_flag || ablation_full || !ablation_seeds.empty()) {
        auto seeds = ablation_seeds.empty() ? std::vector<uint64_t>{0, 1, 2}
                                            : parse_seeds(ablation_seeds);
        run_ablation(cfg, train_dir, eval_dir, out_dir, seeds, ablation_full);
      } else {
        const auto res = cmd_train(cfg, train_dir, out_dir, cfg.seeds.train, resume);
        std::printf("trained %d steps; final l_dm=%.6f l_total=%.6f -> %s\n", res.steps_run,
                    res.last.l_dm, res.last.l_total, res.final_checkpoint.c_str());
      }
      return 0;
    }

    if (ev->parsed()) {
      auto cfg = config_or_default(config_path);
      if (ev->count("--seed")) cfg.seeds.eval = seed;
      if (eval_seeds <= 0) eval_seeds = cfg.eval.eval_seeds;
      const auto res = cmd_eval(ckpt, data_dir, out_dir, metric_list, eval_seeds,
                                cfg.seeds.eval, !no_probes, !no_attention);
      for (const auto& [metric, v] : res.mean) std::printf("%s = %.6f\n", metric.c_str(), v);
      for (const auto& w : res.warnings) std::printf("warning: %s\n", w.c_str());
      return 0;
    }

    if (gen->parsed()) {
      gopts.drop_indices = parse_ints(drop_csv);
      gopts.swap_indices = parse_ints(swap_csv);
      const auto rep = cmd_generate(ckpt, data_dir, out_dir, gopts, seed);
      std::printf("%s: %d images, pixel_mse=%.6f feature_distance=%.6f -> %s\n",
                  rep.mode.c_str(), rep.images, rep.pixel_mse, rep.feature_distance,
                  out_dir.c_str());
      return 0;
    }

    if (mi->parsed()) {
      mi::QuadratureSpec quad;
      quad.gamma_min = mi_lo;
      quad.gamma_max = mi_hi;
      quad.nodes = mi_nodes;
      const auto res =
          cmd_mi_check(parse_reals(rho_csv), mi_dim, mi_tol, out_dir, quad, mc_samples, seed);
      for (const auto& r : res.reports)
        std::printf("rho=%.3f dim=%d delta=%.6f closed=%.6f abs_error=%.2e %s%s\n",
                    r.joint.rho, r.joint.dim, r.delta_numeric, r.delta_closed, r.abs_error,
                    r.passed ? "pass" : "FAIL", r.tail_warning ? " (tail warning)" : "");
      return res.all_passed ? 0 : 1;
    }
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "runtime error: %s\n", e.what());
    return 2;
  }
  return 0;
}
