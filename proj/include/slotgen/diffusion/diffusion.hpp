#pragma once

#include "slotgen/core/tensor.hpp"

#include <cstdint>
#include <functional>

namespace slotgen::diffusion {

real logistic_sigmoid(real x);

// Monotone decreasing log-SNR schedule: gamma(0) = gamma_max (clean end),
// gamma(1) = gamma_min (noise end). Linear by default.
struct NoiseSchedule {
  real gamma_max = 10;
  real gamma_min = -10;
  real gamma(real t) const;  // t in [0,1], throws outside
  bool operator==(const NoiseSchedule&) const = default;
};

// z_gamma = sqrt(sigmoid(gamma)) * z + sqrt(sigmoid(-gamma)) * eps,
// per batch element (gamma has one entry per element of the leading dim).
Tensor noising(const Tensor& z, const Tensor& gamma, const Tensor& eps);
// Scalar-gamma convenience.
Tensor noising(const Tensor& z, real gamma, const Tensor& eps);

// eps_uncond + w * (eps_cond - eps_uncond); w == 1 and w == 0 return the
// respective branch bit-for-bit.
Tensor cfg_combine(const Tensor& eps_cond, const Tensor& eps_uncond, real w);

struct SamplerConfig {
  int steps = 50;
  real cfg_w = 1.0;
  NoiseSchedule schedule;
  bool clip_denoised = true;  // clamp the clean estimate to [-1, 1]
};

using EpsFn = std::function<Tensor(const Tensor& z_noisy, real gamma)>;

// Ancestral sampling over the discretized schedule; deterministic for a fixed
// seed. eps_uncond is consulted only when cfg_w != 1 (the cfg_w == 1 path is
// bitwise the plain conditional sampler).
Tensor sample(const EpsFn& eps_cond, const EpsFn& eps_uncond, std::vector<int> shape,
              const SamplerConfig& cfg, uint64_t seed);

}  // namespace slotgen::diffusion
