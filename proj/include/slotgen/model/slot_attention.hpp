#pragma once

#include "slotgen/model/encoder.hpp"

namespace slotgen::model {

struct SlotAttentionConfig {
  int n_slots = 6;
  int slot_dim = 64;
  int d_input = 64;
  int iterations = 3;
  int mlp_hidden = 128;
  bool operator==(const SlotAttentionConfig&) const = default;
};

struct SlotSet {
  ag::Var slots;  // [B, N, D], final iteration
  ag::Var init;   // [B, N, D], the s0 refinement started from
  int iteration_count = 0;
};

struct AttentionMap {
  // Slot-axis softmax per iteration, [B, M, N]; each row (location) sums to 1.
  std::vector<Tensor> per_iteration;
  int h = 0, w = 0;
  const Tensor& final() const { return per_iteration.back(); }
};

// Weighted-mean-normalized final attention for one image.
struct MaskSet {
  Tensor soft;            // [N, h, w], columns normalized over locations
  std::vector<int> hard;  // h*w argmax slot ids (ties -> lowest index)
  int h = 0, w = 0;
};

class SlotAttention {
 public:
  SlotAttention(const SlotAttentionConfig& cfg, ParamStore& store, Rng& rng);

  // s0 = mu + exp(log_sigma) * noise, one shared draw per call: feeding the
  // same noise to two images realizes the shared-initialization contract.
  static Tensor draw_init_noise(int n, int d, uint64_t seed);
  ag::Var make_init(const Tensor& noise_nd, int batch) const;

  std::pair<SlotSet, AttentionMap> forward(const FeatureMap& features,
                                           const ag::Var& init_bnd) const;

  SlotAttentionConfig cfg;

 private:
  ag::Var gru(const ag::Var& h_rows, const ag::Var& u_rows) const;
  ParamStore* store_;
};

MaskSet attention_masks(const Tensor& final_attention_mn, int h, int w);

}  // namespace slotgen::model
