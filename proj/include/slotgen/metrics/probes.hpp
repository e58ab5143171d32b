#pragma once

#include "slotgen/metrics/segmentation.hpp"
#include "slotgen/model/pipeline.hpp"
#include "slotgen/scene/scene.hpp"

#include <string>
#include <vector>

namespace slotgen::metrics {

// One row per Hungarian-matched (slot, ground-truth instance) pair, with the
// frozen slot vector as features and the instance properties as labels.
struct ProbeDataset {
  Tensor features;  // [K, D]
  std::vector<int> shape_label;   // categorical
  std::vector<int> color_label;   // categorical
  std::vector<real> cx, cy, size; // continuous
  std::vector<uint8_t> is_test;
  int n_shapes = 0, n_colors = 0;
  int rows() const { return features.ndim() ? features.dim(0) : 0; }
};

ProbeDataset collect_probe_dataset(model::Pipeline& pipe,
                                   const std::vector<scene::Scene>& scenes,
                                   uint64_t seed, real test_fraction = 0.2);

struct ProbeConfig {
  int hidden = 128;  // paper-scale 786 stays available through config
  int epochs = 300;
  real lr = 1e-2;
  bool cheat_mode = false;  // labels fed as features (sanity upper bound)
};

struct ProbeReport {
  std::string property;
  bool categorical = false;
  real accuracy = 0;  // categorical
  real mse = 0;       // continuous
  real constant_baseline_mse = 0;  // predict-train-mean reference
  bool degenerate_labels = false;  // single class in training split
  int train_rows = 0, test_rows = 0;
};

// property: shape | color | position | size
ProbeReport probe_fit_eval(const ProbeDataset& data, const std::string& property,
                           const ProbeConfig& cfg, uint64_t seed);

// Predicted segmentation for one scene at a given slot-init seed: hard
// attention masks upsampled to pixel resolution, labels slot_index + 1.
Partition predict_partition(model::Pipeline& pipe, const scene::Scene& sc, uint64_t seed);
Partition gt_partition(const scene::Scene& sc);
std::vector<int> gt_class_of(const scene::Scene& sc);  // instance id -> shape class

}  // namespace slotgen::metrics
