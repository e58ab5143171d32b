#include "slotgen/diffusion/diffusion.hpp"

#include "slotgen/core/errors.hpp"
#include "slotgen/core/rng.hpp"

#include <cmath>

namespace slotgen::diffusion {

real logistic_sigmoid(real x) { return real(1) / (real(1) + std::exp(-x)); }

real NoiseSchedule::gamma(real t) const {
  if (!(t >= 0 && t <= 1)) throw ValidationError("schedule time must be in [0,1]");
  return gamma_max + (gamma_min - gamma_max) * t;
}

Tensor noising(const Tensor& z, const Tensor& gamma, const Tensor& eps) {
  if (!z.same_shape(eps)) throw ValidationError("noising: z and eps shapes differ");
  const int b = z.dim(0);
  if (gamma.numel() != b) throw ValidationError("noising: need one gamma per element");
  Tensor out(z.shape);
  const int64_t stride = z.numel() / b;
  for (int i = 0; i < b; ++i) {
    const real a = std::sqrt(logistic_sigmoid(gamma[i]));
    const real s = std::sqrt(logistic_sigmoid(-gamma[i]));
    const real* zp = z.data() + i * stride;
    const real* ep = eps.data() + i * stride;
    real* op = out.data() + i * stride;
    for (int64_t j = 0; j < stride; ++j) op[j] = a * zp[j] + s * ep[j];
  }
  return out;
}

Tensor noising(const Tensor& z, real gamma, const Tensor& eps) {
  Tensor g({z.dim(0)});
  std::fill(g.v.begin(), g.v.end(), gamma);
  return noising(z, g, eps);
}

Tensor cfg_combine(const Tensor& eps_cond, const Tensor& eps_uncond, real w) {
  if (!eps_cond.same_shape(eps_uncond)) throw ValidationError("cfg_combine shape mismatch");
  if (w == 1) return eps_cond;
  if (w == 0) return eps_uncond;
  Tensor out(eps_cond.shape);
  for (int64_t i = 0; i < out.numel(); ++i)
    out[i] = eps_uncond[i] + w * (eps_cond[i] - eps_uncond[i]);
  return out;
}

Tensor sample(const EpsFn& eps_cond, const EpsFn& eps_uncond, std::vector<int> shape,
              const SamplerConfig& cfg, uint64_t seed) {
  if (cfg.steps < 1) throw ValidationError("sampler needs steps >= 1");
  Rng rng = derive_rng(seed, 0x5A3317);
  Tensor x(shape);
  rng.fill_normal(x);

  for (int i = cfg.steps; i >= 1; --i) {
    const real t_cur = static_cast<real>(i) / cfg.steps;
    const real gamma_cur = cfg.schedule.gamma(t_cur);
    const real abar = logistic_sigmoid(gamma_cur);

    Tensor eps = eps_cond(x, gamma_cur);
    if (cfg.cfg_w != 1) eps = cfg_combine(eps, eps_uncond(x, gamma_cur), cfg.cfg_w);

    // Clean estimate from the noise prediction.
    Tensor z0(x.shape);
    const real inv_a = real(1) / std::sqrt(abar);
    const real s = std::sqrt(1 - abar);
    for (int64_t j = 0; j < x.numel(); ++j) {
      real v = inv_a * (x[j] - s * eps[j]);
      if (cfg.clip_denoised) v = v < -1 ? -1 : (v > 1 ? 1 : v);
      z0[j] = v;
    }
    if (i == 1) return z0;

    const real t_prev = static_cast<real>(i - 1) / cfg.steps;
    const real abar_prev = logistic_sigmoid(cfg.schedule.gamma(t_prev));
    const real alpha = abar / abar_prev;
    const real denom = 1 - abar;
    const real coef_x = std::sqrt(alpha) * (1 - abar_prev) / denom;
    const real coef_z = std::sqrt(abar_prev) * (1 - alpha) / denom;
    const real var = (1 - alpha) * (1 - abar_prev) / denom;
    const real sd = var > 0 ? std::sqrt(var) : 0;
    for (int64_t j = 0; j < x.numel(); ++j)
      x[j] = coef_x * x[j] + coef_z * z0[j] + sd * rng.normal();
  }
  return x;  // unreachable
}

}  // namespace slotgen::diffusion
