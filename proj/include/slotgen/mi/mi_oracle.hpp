#pragma once

#include "slotgen/core/tensor.hpp"

#include <cstdint>
#include <iosfwd>
#include <vector>

// Numerical verification of the denoising-gap identity on jointly Gaussian
// (z, s) pairs, where the optimal conditional denoiser, the mutual
// information, and the reverse KL all have closed forms. Negatives here are
// drawn independently (q(s~|z) = p(s~)), the one case with closed-form KL
// terms. Register banks deliberately never appear in this interface: they are
// input-independent and cannot carry information about z.
namespace slotgen::mi {

struct GaussianJoint {
  int dim = 1;     // i.i.d. coordinates
  real rho = 0.0;  // per-coordinate correlation, |rho| < 1
  void validate() const;
};

// Per-coordinate expected squared error of the optimal conditional denoiser,
// fed the true s (conditional) or an independent draw (mismatched).
struct MmseGap {
  real conditional = 0;
  real mismatched = 0;
};
MmseGap analytic_mmse_gap(const GaussianJoint& joint, real gamma);

struct McEstimate {
  real mean = 0;
  real std_error = 0;
};
struct McMmse {
  McEstimate conditional, mismatched;
};
// Monte-Carlo estimate of the same quantities (per coordinate).
McMmse mc_mmse_gap(const GaussianJoint& joint, real gamma, int samples, uint64_t seed);

struct QuadratureSpec {
  real gamma_min = -15;
  real gamma_max = 15;
  int nodes = 2001;
  // Endpoint |integrand| above this raises the truncation warning.
  real tail_tolerance = 1e-5;
};

struct DeltaEstimate {
  real delta = 0;          // summed over coordinates
  real tail_estimate = 0;  // |integrand| at both endpoints
  bool tail_warning = false;
  real max_mc_deviation_se = 0;  // closed-form vs MC, in standard errors
  int mc_samples = 0;
};
// Trapezoidal quadrature of (1/2)(mmse_conditional - mmse_mismatched) over
// gamma. The additive constant of the likelihood identity cancels in this
// difference, so truncation is the only error source. When mc_samples > 0 the
// closed-form integrand is cross-checked by Monte Carlo at probe nodes.
DeltaEstimate estimate_delta(const GaussianJoint& joint, const QuadratureSpec& quad,
                             int mc_samples, uint64_t seed);

struct ClosedForm {
  real mutual_information = 0;  // I(z; s)
  real kl_reverse = 0;          // D_KL(p(z)p(s) || p(z,s))
  real delta_closed = 0;        // -I - KL_rev
};
ClosedForm closed_form_reference(const GaussianJoint& joint);

struct MIReport {
  GaussianJoint joint;
  real delta_numeric = 0;
  real mutual_information = 0;
  real kl_reverse = 0;
  real delta_closed = 0;
  real abs_error = 0;
  real tolerance = 0;
  bool passed = false;
  bool tail_warning = false;
  real max_mc_deviation_se = 0;
  QuadratureSpec quadrature;
  int mc_samples = 0;
};
MIReport verify_corollary(const GaussianJoint& joint, real tolerance,
                          const QuadratureSpec& quad = {}, int mc_samples = 100000,
                          uint64_t seed = 0);

void write_report(const MIReport& r, std::ostream& os);

// (gamma, integrand) samples for plotting.
std::vector<std::pair<real, real>> integrand_curve(const GaussianJoint& joint,
                                                   const QuadratureSpec& quad);

}  // namespace slotgen::mi
