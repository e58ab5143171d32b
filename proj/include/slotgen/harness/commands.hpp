#pragma once

#include "slotgen/harness/checkpoint.hpp"
#include "slotgen/metrics/generation.hpp"
#include "slotgen/mi/mi_oracle.hpp"

namespace slotgen::harness {

// Library entry points behind the CLI subcommands. All throw ValidationError
// for bad input and std::runtime_error for runtime failures; the CLI maps
// these to exit codes 1 and 2.

std::string cmd_data(const ExperimentConfig& config, const std::string& out_dir);

struct TrainResult {
  std::string final_checkpoint;
  std::string init_checkpoint;
  int steps_run = 0;
  train::LossBreakdown last;
};
TrainResult cmd_train(const ExperimentConfig& config, const std::string& data_dir,
                      const std::string& out_dir, uint64_t train_seed,
                      const std::string& resume_path = "");

struct EvalResult {
  // metric name -> per-seed scene means
  std::map<std::string, std::vector<real>> per_seed;
  std::map<std::string, real> mean;
  std::vector<metrics::ProbeReport> probes;
  metrics::AttentionMassReport attention;
  std::vector<std::string> warnings;
};
EvalResult cmd_eval(const std::string& checkpoint_path, const std::string& data_dir,
                    const std::string& out_dir, const std::string& metric_list,
                    int eval_seeds, uint64_t eval_seed, bool with_probes = true,
                    bool with_attention = true);

struct GenerateOptions {
  std::string mode = "reconstruction";  // reconstruction|compositional|single_slot|edit
  real cfg_w = 1.0;
  int steps = 50;
  int scene_count = 4;
  // edit mode
  int scene_a = 0, scene_b = 1;
  std::vector<int> drop_indices;
  std::vector<int> swap_indices;
};
metrics::GenerationReport cmd_generate(const std::string& checkpoint_path,
                                       const std::string& data_dir,
                                       const std::string& out_dir,
                                       const GenerateOptions& opts, uint64_t seed);

struct MiCheckResult {
  std::vector<mi::MIReport> reports;
  bool all_passed = true;
};
MiCheckResult cmd_mi_check(const std::vector<real>& rhos, int dim, real tolerance,
                           const std::string& out_dir, const mi::QuadratureSpec& quad = {},
                           int mc_samples = 100000, uint64_t seed = 0);

// Orchestration used by the sweep/ablation harnesses: trains one run per
// variant and tabulates the evaluated metrics.
struct SweepRow {
  std::string label;
  std::map<std::string, real> metrics;
};
std::vector<SweepRow> run_sweep(const ExperimentConfig& base, const std::string& data_dir,
                                const std::string& eval_dir, const std::string& out_dir,
                                const std::string& param,  // "lambda_cl" | "negative_ratio"
                                const std::vector<real>& values, uint64_t train_seed);
std::vector<SweepRow> run_ablation(const ExperimentConfig& base, const std::string& data_dir,
                                   const std::string& eval_dir, const std::string& out_dir,
                                   const std::vector<uint64_t>& seeds,
                                   bool full_grid = false);

// Shared helpers.
std::vector<ImageU8> load_training_images(const std::string& data_dir);
std::string default_out_root();

}  // namespace slotgen::harness
