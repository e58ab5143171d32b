#pragma once

#include "slotgen/core/autograd.hpp"
#include "slotgen/core/rng.hpp"
#include "slotgen/core/tensor.hpp"

#include <string>
#include <unordered_map>
#include <vector>

namespace slotgen::model {

// phi: slot encoder side (feature encoder, slot attention, slot init
// statistics, learnable register bank). theta: denoiser side. The contrastive
// loss updates phi only; theta enters it behind detached leaves.
enum class Group { kPhi, kTheta };

struct ParamInfo {
  ag::Var var;
  Group group = Group::kPhi;
  bool trainable = true;
  // Member of the cross-attention key/value/output projection set, the part
  // kept trainable under restricted finetuning.
  bool cross_attention_kvo = false;
};

class ParamStore {
 public:
  ag::Var create(const std::string& name, Tensor init, Group group, bool trainable = true,
                 bool cross_attention_kvo = false);
  ag::Var get(const std::string& name) const;
  // Detached view for stop-gradient evaluation.
  ag::Var get(const std::string& name, bool detached) const;
  bool has(const std::string& name) const { return map_.count(name) > 0; }
  const ParamInfo& info(const std::string& name) const;
  ParamInfo& info(const std::string& name);
  const std::vector<std::string>& names() const { return order_; }  // registration order

  void zero_grads();
  // Bitwise content hash over values in registration order.
  uint64_t checksum() const;

 private:
  std::vector<std::string> order_;
  std::unordered_map<std::string, ParamInfo> map_;
};

// Initializers.
Tensor normal_init(std::vector<int> shape, real stddev, Rng& rng);
Tensor kaiming_conv_init(int out_c, int in_c, int kh, int kw, Rng& rng);
Tensor linear_init(int out_f, int in_f, Rng& rng);

}  // namespace slotgen::model
