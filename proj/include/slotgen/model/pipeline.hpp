#pragma once

#include "slotgen/core/errors.hpp"
#include "slotgen/diffusion/diffusion.hpp"
#include "slotgen/model/denoiser.hpp"

#include <memory>

namespace slotgen::model {

struct ModelConfig {
  EncoderConfig encoder;
  SlotAttentionConfig slots;
  RegisterBankConfig registers;
  DenoiserConfig denoiser;
  diffusion::NoiseSchedule schedule;
  uint64_t init_seed = 0;
  bool operator==(const ModelConfig&) const = default;
};

// The full model: feature encoder + slot attention (phi) and register bank +
// conditional denoiser (theta), sharing one parameter store. Construction
// order fixes the parameter registration order, which in turn fixes optimizer
// iteration and checkpoint layout.
struct Pipeline {
  explicit Pipeline(const ModelConfig& cfg_in) : cfg(cfg_in) {
    if (cfg.slots.d_input != cfg.encoder.d_input)
      throw ValidationError("slot attention d_input must match encoder output");
    if (cfg.registers.dim != cfg.slots.slot_dim)
      throw ValidationError("register dim must match slot dim");
    if (cfg.denoiser.cond_dim != cfg.slots.slot_dim)
      throw ValidationError("denoiser cond_dim must match slot dim");
    if (cfg.denoiser.null_tokens < cfg.slots.n_slots)
      throw ValidationError("denoiser null_tokens must cover the slot count");
    Rng rng = derive_rng(cfg.init_seed, 0x1417);
    encoder = std::make_unique<Encoder>(cfg.encoder, store, rng);
    sa = std::make_unique<SlotAttention>(cfg.slots, store, rng);
    registers = std::make_unique<RegisterBank>(cfg.registers, store);
    denoiser = std::make_unique<Denoiser>(cfg.denoiser, store, rng);
  }

  ModelConfig cfg;
  ParamStore store;
  std::unique_ptr<Encoder> encoder;
  std::unique_ptr<SlotAttention> sa;
  std::unique_ptr<RegisterBank> registers;
  std::unique_ptr<Denoiser> denoiser;
};

}  // namespace slotgen::model
