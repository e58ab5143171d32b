#pragma once

#include "slotgen/model/pipeline.hpp"
#include "slotgen/scene/scene.hpp"
#include "slotgen/train/trainer.hpp"

#include <iosfwd>
#include <string>

namespace slotgen::harness {

// Versioned nested key-value experiment description. Unknown sections or keys
// are rejected so stale configs fail loudly.
struct ExperimentConfig {
  int format_version = 1;

  struct Dataset {
    scene::SceneSpec spec;
    int count = 2000;
    int eval_count = 200;
    uint64_t seed = 0;
    bool operator==(const Dataset&) const = default;
  } dataset;

  struct Model {
    int n_slots = 6;
    int slot_dim = 64;
    int iterations = 3;  // Table-8 default
    int encoder_patch = 8;
    int encoder_channels = 24;
    int d_input = 64;
    std::string register_mode = "fixed";  // fixed | learnable
    int register_count = 8;
    uint64_t register_seed = 0;
    int denoiser_patch = 8;
    int denoiser_channels = 32;
    int denoiser_levels = 2;
    int denoiser_heads = 2;
    real gamma_max = 10;
    real gamma_min = -10;
    uint64_t init_seed = 0;
    bool operator==(const Model&) const = default;
  } model;

  struct Objective {
    real lambda_cl = 0.05;       // Table-8 default
    real negative_ratio = 0.5;   // replace half of the slots
    real cond_dropout = 0.1;
    std::string freeze = "none";  // none | non_cross_attention
    bool operator==(const Objective&) const = default;
  } objective;

  struct Optimizer {
    real lr = 4e-4;
    int warmup_steps = 2500;  // Table-8 default
    real clip_norm = 1.0;     // Table-8 default
    real weight_decay = 0.01;
    int total_steps = 5000;
    int batch_size = 32;
    int checkpoint_every = 1000;
    int log_every = 10;
    bool operator==(const Optimizer&) const = default;
  } optimizer;

  struct Eval {
    real cfg_w = 1.0;
    int sample_steps = 50;
    int eval_seeds = 5;
    std::string metrics = "fg_ari,mbo_i,mbo_c,miou_i,miou_c";
    bool operator==(const Eval&) const = default;
  } eval;

  struct Seeds {
    uint64_t train = 0;
    uint64_t eval = 0;
    bool operator==(const Seeds&) const = default;
  } seeds;

  model::ModelConfig to_model_config() const;
  train::TrainStepConfig to_train_config() const;

  bool operator==(const ExperimentConfig&) const = default;
};

ExperimentConfig parse_config(std::istream& in);
ExperimentConfig parse_config_string(const std::string& text);
ExperimentConfig load_config(const std::string& path);
std::string serialize_config(const ExperimentConfig& c);

}  // namespace slotgen::harness
