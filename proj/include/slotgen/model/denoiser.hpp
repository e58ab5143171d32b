#pragma once

#include "slotgen/model/registers.hpp"

namespace slotgen::model {

struct DenoiserConfig {
  int image_size = 64;
  int in_channels = 3;
  int patch = 8;          // patchify stem; internal grid = image_size / patch
  int base_channels = 48;
  int levels = 2;         // 1 = no down/up path
  int heads = 2;
  int cond_dim = 64;
  int time_freqs = 16;    // sinusoidal bank size (sin+cos features)
  int null_tokens = 6;    // learned stand-ins for dropped semantic slots
  bool operator==(const DenoiserConfig&) const = default;
};

// Cross-attention probabilities captured during a forward pass, one entry per
// layer, one tensor per head, each [B, queries, tokens].
struct AttentionRecord {
  struct Layer {
    std::string name;
    std::vector<Tensor> head_probs;
  };
  std::vector<Layer> layers;
};

// U-shaped conditional noise predictor: patchify stem, residual conv blocks
// with a log-SNR embedding, one cross-attention block per level reading the
// conditioning tokens, nearest-neighbor up path with skip concat.
class Denoiser {
 public:
  Denoiser(const DenoiserConfig& cfg, ParamStore& store, Rng& rng);

  // detach_params evaluates the same function through gradient-stopped
  // parameter leaves: the value is unchanged and exactly zero gradient
  // reaches any denoiser parameter.
  ag::Var forward(const Tensor& z_noisy_bchw, const Tensor& gamma_b, const ag::Var& cond,
                  bool detach_params = false, AttentionRecord* record = nullptr) const;

  // First n_semantic learned null tokens, expanded to the batch, used for the
  // unconditional branch and slot drop/swap editing.
  ag::Var null_semantic_tokens(int batch, int n_semantic, bool detach_params = false) const;

  DenoiserConfig cfg;

 private:
  struct ResNames;
  ag::Var resblock(const std::string& prefix, const ag::Var& x, const ag::Var& temb,
                   bool detach) const;
  ag::Var cross_attention(const std::string& prefix, const ag::Var& x, const ag::Var& cond,
                          bool detach, AttentionRecord* record) const;
  ag::Var group_norm(const std::string& prefix, const ag::Var& x, bool detach) const;
  ag::Var p(const std::string& name, bool detach) const;

  ParamStore* store_;
  int grid_ = 0;
};

}  // namespace slotgen::model
