#pragma once

#include "slotgen/core/image.hpp"
#include "slotgen/train/objectives.hpp"

#include <map>

namespace slotgen::train {

enum class FreezeMode {
  kNone,               // whole denoiser trainable (desk-scale default)
  kNonCrossAttention,  // restricted regime: only cross-attn K/V/output learn
};

struct OptimizerConfig {
  real lr = 4e-4;
  int warmup_steps = 2500;  // linear warm-up, then constant
  real clip_norm = 1.0;
  real weight_decay = 0.01;  // decoupled
  real beta1 = 0.9;
  real beta2 = 0.999;
  real adam_eps = 1e-8;
};

struct TrainStepConfig {
  ObjectiveConfig objective;
  OptimizerConfig optimizer;
  FreezeMode freeze = FreezeMode::kNone;
  int batch_size = 32;
  diffusion::NoiseSchedule schedule;
};

struct AdamSlot {
  Tensor m, v;
};

// One optimizer step over a sampled batch. All randomness derives from
// (seed, step_index), so training is resumable and bit-reproducible.
class Trainer {
 public:
  Trainer(model::Pipeline& pipe, const TrainStepConfig& cfg, uint64_t seed);

  LossBreakdown step(const std::vector<ImageU8>& dataset, int step_index);

  // Names the optimizer updates, respecting the freeze mode.
  std::vector<std::string> trainable_names() const;
  real learning_rate(int step_index) const;

  std::map<std::string, AdamSlot>& adam_state() { return adam_; }
  int64_t& adam_steps() { return adam_t_; }
  const TrainStepConfig& config() const { return cfg_; }
  uint64_t seed() const { return seed_; }

  // Exposed for tests: builds the losses for a prepared batch without
  // touching parameters. Returns {l_dm, l_cl (null when disabled)}.
  struct Graphs {
    ag::Var l_dm, l_cl, l_total;
    model::SlotSet slots;
  };
  Graphs build_losses(const Tensor& images_bchw, int step_index) const;

  // Applies accumulated gradients: global-norm clip then Adam with linear
  // warm-up and decoupled weight decay. Returns the pre-clip norm.
  real apply_gradients(int step_index);

 private:
  model::Pipeline* pipe_;
  TrainStepConfig cfg_;
  uint64_t seed_;
  std::map<std::string, AdamSlot> adam_;
  int64_t adam_t_ = 0;
};

// [0,1] HWC u8 image -> [-1,1] CHW signal tensor rows of a batch.
Tensor batch_to_signal(const std::vector<ImageU8>& images, const std::vector<int>& indices);
Tensor image_to_signal(const ImageU8& img);
Tensor signal_to_image_hw3(const Tensor& signal_chw);

}  // namespace slotgen::train
