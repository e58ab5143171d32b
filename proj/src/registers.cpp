#include "slotgen/model/registers.hpp"

#include "slotgen/core/errors.hpp"

#include <cmath>

namespace slotgen::model {

Tensor RegisterBank::fixed_bank(int count, int dim, uint64_t seed) {
  Rng rng = derive_rng(seed, 0x2E6B);
  Tensor bank({count, dim});
  rng.fill_normal(bank);
  // Unit RMS per row, matching the scale of learned slot initializations.
  for (int r = 0; r < count; ++r) {
    real ss = 0;
    for (int j = 0; j < dim; ++j) ss += bank.at(r, j) * bank.at(r, j);
    const real rms = std::sqrt(ss / dim);
    if (rms > 0)
      for (int j = 0; j < dim; ++j) bank.at(r, j) /= rms;
  }
  return bank;
}

RegisterBank::RegisterBank(const RegisterBankConfig& cfg_in, ParamStore& store)
    : cfg(cfg_in), store_(&store) {
  if (cfg.count < 0) throw ValidationError("register count must be >= 0");
  if (cfg.count == 0) return;
  if (cfg.mode == RegisterMode::kFixed) {
    fixed_ = fixed_bank(cfg.count, cfg.dim, cfg.seed);
  } else {
    // Learnable registers sit on the phi side: the contrastive loss reaches
    // them only through the conditioning path of the frozen decoder.
    store.create("registers.bank", fixed_bank(cfg.count, cfg.dim, cfg.seed), Group::kPhi,
                 /*trainable=*/true);
  }
}

ag::Var RegisterBank::tokens(int batch) const {
  if (cfg.count == 0) return nullptr;
  if (cfg.mode == RegisterMode::kFixed)
    return ag::expand_batch(ag::constant(fixed_), batch);
  return ag::expand_batch(store_->get("registers.bank"), batch);
}

Tensor RegisterBank::values() const {
  if (cfg.count == 0) return Tensor({0, cfg.dim});
  return cfg.mode == RegisterMode::kFixed ? fixed_ : store_->get("registers.bank")->value;
}

ag::Var concat_conditioning(const ag::Var& slots_bnd, const RegisterBank& bank) {
  if (bank.cfg.count == 0) return slots_bnd;
  if (slots_bnd->value.dim(2) != bank.cfg.dim)
    throw ValidationError("slot dim does not match register dim");
  return ag::concat_axis1(slots_bnd, bank.tokens(slots_bnd->value.dim(0)));
}

}  // namespace slotgen::model
