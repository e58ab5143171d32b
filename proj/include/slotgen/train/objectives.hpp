#pragma once

#include "slotgen/model/pipeline.hpp"

namespace slotgen::train {

struct ObjectiveConfig {
  real lambda_cl = 0.05;
  real negative_ratio = 0.5;  // in (0, 1]
  real cond_dropout = 0.1;    // per-element semantic-token dropout in the denoising term
  bool contrastive_enabled() const { return lambda_cl > 0; }
};

// round-half-up(ratio * n), clamped to [1, n].
int replaced_count(real ratio, int n);

// One replacement subset per batch element; 1 marks a replaced slot index.
// Exactly replaced_count(ratio, n) entries per row.
Tensor negative_masks(int batch, int n, real ratio, Rng& rng);

// Hard negatives: slot i of a replaced by slot i of b at masked positions.
// Requires the shared-initialization contract (a.init == b.init elementwise).
ag::Var compose_negatives(const model::SlotSet& a, const model::SlotSet& b,
                          const Tensor& mask_bn);

// mean over batch and signal dims of ||eps - eps_theta(z_gamma, gamma, cond)||^2.
// z_gamma is formed internally from (z, gamma, eps) so the positive and
// negative terms of a step can share one DiffusionState.
ag::Var denoising_loss_graph(const model::Pipeline& pipe, const Tensor& z_gamma,
                             const Tensor& gamma, const ag::Var& cond, const Tensor& eps,
                             bool detach_decoder);

// Negative of the denoising loss through a gradient-stopped decoder.
ag::Var contrastive_loss_graph(const model::Pipeline& pipe, const Tensor& z_gamma,
                               const Tensor& gamma, const ag::Var& negatives_cond,
                               const Tensor& eps);

struct LossBreakdown {
  real l_dm = 0;
  real l_cl = 0;
  real lambda_cl = 0;
  real l_total = 0;
  real grad_norm = 0;  // pre-clipping global norm
  real lr = 0;
};

}  // namespace slotgen::train
