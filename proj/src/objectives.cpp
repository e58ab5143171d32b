#include "slotgen/train/objectives.hpp"

#include "slotgen/core/errors.hpp"

#include <cmath>

namespace slotgen::train {

int replaced_count(real ratio, int n) {
  if (!(ratio > 0 && ratio <= 1))
    throw ValidationError("negative ratio must lie in (0, 1]");
  const int k = static_cast<int>(std::floor(ratio * n + real(0.5)));  // round half up
  return std::max(1, std::min(n, k));
}

Tensor negative_masks(int batch, int n, real ratio, Rng& rng) {
  const int k = replaced_count(ratio, n);
  Tensor mask({batch, n});
  std::vector<int> idx(static_cast<size_t>(n));
  for (int b = 0; b < batch; ++b) {
    for (int i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
    // Partial Fisher-Yates: the first k entries are a uniform subset.
    for (int i = 0; i < k; ++i) {
      const int j = i + rng.uniform_int(n - i);
      std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
    }
    for (int i = 0; i < k; ++i) mask.at(b, idx[static_cast<size_t>(i)]) = 1;
  }
  return mask;
}

ag::Var compose_negatives(const model::SlotSet& a, const model::SlotSet& b,
                          const Tensor& mask_bn) {
  if (!a.slots->value.same_shape(b.slots->value))
    throw ValidationError("compose_negatives: slot shape mismatch");
  if (!a.init->value.same_shape(b.init->value) || a.init->value.v != b.init->value.v)
    throw ValidationError(
        "compose_negatives: shared-initialization contract violated (init arrays differ)");
  return ag::select_rows(mask_bn, a.slots, b.slots);
}

ag::Var denoising_loss_graph(const model::Pipeline& pipe, const Tensor& z_gamma,
                             const Tensor& gamma, const ag::Var& cond, const Tensor& eps,
                             bool detach_decoder) {
  const ag::Var eps_hat = pipe.denoiser->forward(z_gamma, gamma, cond, detach_decoder);
  return ag::mean_all(ag::square(ag::sub(ag::constant(eps), eps_hat)));
}

ag::Var contrastive_loss_graph(const model::Pipeline& pipe, const Tensor& z_gamma,
                               const Tensor& gamma, const ag::Var& negatives_cond,
                               const Tensor& eps) {
  return ag::neg(
      denoising_loss_graph(pipe, z_gamma, gamma, negatives_cond, eps, /*detach=*/true));
}

}  // namespace slotgen::train
