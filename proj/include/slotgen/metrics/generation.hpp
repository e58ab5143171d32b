#pragma once

#include "slotgen/metrics/probes.hpp"

namespace slotgen::metrics {

// Per-index categorical remix of a batch of slot tensors: output element i
// takes slot j from a uniformly chosen source element.
Tensor compositional_mix(const Tensor& slots_bnd, uint64_t seed);

// Slots for a scene at a fixed init seed (final iteration, value only).
Tensor scene_slots(model::Pipeline& pipe, const scene::Scene& sc, uint64_t seed);

// Draws one image from slot conditioning (semantic rows may be null tokens).
Tensor sample_from_slots(model::Pipeline& pipe, const Tensor& slots_nd, real cfg_w,
                         int steps, uint64_t seed);

struct GenerationReport {
  std::string mode;
  real pixel_mse = 0;          // reconstruction only
  real feature_distance = 0;   // own-encoder statistics; not FID-comparable
  int images = 0;
};

enum class GenerationMode { kReconstruction, kCompositional, kSingleSlot };

GenerationReport generation_eval(model::Pipeline& pipe,
                                 const std::vector<scene::Scene>& scenes,
                                 GenerationMode mode, real cfg_w, int steps,
                                 uint64_t seed, const std::string& out_dir);

// Mean fraction of cross-attention mass on register tokens, per layer,
// averaged over heads, noise levels, spatial queries, and scenes.
struct AttentionMassReport {
  std::vector<std::string> layer_names;
  std::vector<real> register_fraction;     // per layer
  Tensor per_token_mass;                   // [layers, n_semantic + 1], last col = registers
};

AttentionMassReport attention_mass_report(model::Pipeline& pipe,
                                          const std::vector<scene::Scene>& scenes,
                                          const std::vector<real>& noise_times,
                                          uint64_t seed);

// Aggregation core, exposed so a uniform-attention record can be checked
// against the closed-form R/(N+R) value.
std::vector<real> register_fraction_from_record(const model::AttentionRecord& record,
                                                int n_semantic);

// Pooled own-encoder feature statistics distance between two image sets
// (diagonal-Gaussian Frechet form). Not comparable to inception-based scores.
real feature_distance(model::Pipeline& pipe, const std::vector<Tensor>& set_a_hw3,
                      const std::vector<Tensor>& set_b_hw3);

}  // namespace slotgen::metrics
