#pragma once

#include "slotgen/model/slot_attention.hpp"

namespace slotgen::model {

enum class RegisterMode { kFixed, kLearnable };

struct RegisterBankConfig {
  int count = 8;
  int dim = 64;
  RegisterMode mode = RegisterMode::kFixed;
  uint64_t seed = 0;
  bool operator==(const RegisterBankConfig&) const = default;
};

// R input-independent conditioning vectors appended to the semantic slots.
// Fixed mode: a seeded frozen bank, rows scaled to unit RMS (semantically
// empty but structurally valid tokens). Learnable mode: a phi-side parameter.
class RegisterBank {
 public:
  RegisterBank(const RegisterBankConfig& cfg, ParamStore& store);

  // [B, R, D] conditioning rows; fixed banks enter as constants, so no
  // gradient can reach them by construction.
  ag::Var tokens(int batch) const;
  Tensor values() const;

  static Tensor fixed_bank(int count, int dim, uint64_t seed);

  RegisterBankConfig cfg;

 private:
  ParamStore* store_;
  Tensor fixed_;  // kFixed mode only
};

// Order-preserving concatenation (s, r); R = 0 returns the slots unchanged.
ag::Var concat_conditioning(const ag::Var& slots_bnd, const RegisterBank& bank);

struct ConditioningLayout {
  int semantic_count = 0;
  int register_count = 0;
  int total() const { return semantic_count + register_count; }
};

}  // namespace slotgen::model
