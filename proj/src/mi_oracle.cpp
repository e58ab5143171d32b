#include "slotgen/mi/mi_oracle.hpp"

#include "slotgen/core/errors.hpp"
#include "slotgen/core/rng.hpp"

#include <cmath>
#include <ostream>

namespace slotgen::mi {

namespace {
real sigmoid(real x) { return real(1) / (real(1) + std::exp(-x)); }

// Per-coordinate integrand of the delta quadrature.
real integrand_per_coord(real rho, real gamma) {
  const real sig = sigmoid(gamma);
  const real sigm = sigmoid(-gamma);
  const real c = 1 - rho * rho;
  const real kappa = sig * c + sigm;
  const real cond = sig * c / kappa;
  const real mis = sig * (sig * c * c + sigm * (1 + rho * rho)) / (kappa * kappa);
  return real(0.5) * (cond - mis);
}
}  // namespace

void GaussianJoint::validate() const {
  if (dim < 1) throw ValidationError("GaussianJoint: dim must be >= 1");
  if (!(std::abs(rho) < 1)) throw ValidationError("GaussianJoint: |rho| must be < 1");
}

MmseGap analytic_mmse_gap(const GaussianJoint& joint, real gamma) {
  joint.validate();
  const real rho = joint.rho;
  const real sig = sigmoid(gamma);
  const real sigm = sigmoid(-gamma);
  const real c = 1 - rho * rho;
  const real kappa = sig * c + sigm;
  MmseGap g;
  // Posterior variance of eps given (z_gamma, s); Gaussian algebra on the
  // linear channel z_gamma = sqrt(sig) z + sqrt(sigm) eps with z|s ~ N(rho s, c).
  g.conditional = sig * c / kappa;
  // Same denoiser fed an independent s~: epsilon-hat stays linear in
  // (z_gamma, s~), so the error expands into three independent terms.
  g.mismatched = sig * (sig * c * c + sigm * (1 + rho * rho)) / (kappa * kappa);
  return g;
}

McMmse mc_mmse_gap(const GaussianJoint& joint, real gamma, int samples, uint64_t seed) {
  joint.validate();
  const real rho = joint.rho;
  const real a = std::sqrt(sigmoid(gamma));
  const real b = std::sqrt(sigmoid(-gamma));
  const real c = 1 - rho * rho;
  const real kappa = sigmoid(gamma) * c + sigmoid(-gamma);
  Rng rng = derive_rng(seed, 0x3107C);
  real sum_c = 0, sumsq_c = 0, sum_m = 0, sumsq_m = 0;
  for (int i = 0; i < samples; ++i) {
    const real s = rng.normal();
    const real z = rho * s + std::sqrt(c) * rng.normal();
    const real eps = rng.normal();
    const real zg = a * z + b * eps;
    const real s_neg = rng.normal();
    const real e_cond = b * (zg - a * rho * s) / kappa;
    const real e_mis = b * (zg - a * rho * s_neg) / kappa;
    const real err_c = (eps - e_cond) * (eps - e_cond);
    const real err_m = (eps - e_mis) * (eps - e_mis);
    sum_c += err_c;
    sumsq_c += err_c * err_c;
    sum_m += err_m;
    sumsq_m += err_m * err_m;
  }
  auto finish = [samples](real sum, real sumsq) {
    McEstimate e;
    e.mean = sum / samples;
    const real var = std::max(real(0), sumsq / samples - e.mean * e.mean);
    e.std_error = std::sqrt(var / samples);
    return e;
  };
  return {finish(sum_c, sumsq_c), finish(sum_m, sumsq_m)};
}

DeltaEstimate estimate_delta(const GaussianJoint& joint, const QuadratureSpec& quad,
                             int mc_samples, uint64_t seed) {
  joint.validate();
  if (quad.nodes < 2) throw ValidationError("quadrature needs >= 2 nodes");
  if (!(quad.gamma_max > quad.gamma_min))
    throw ValidationError("quadrature bounds must satisfy gamma_min < gamma_max");
  const real h = (quad.gamma_max - quad.gamma_min) / (quad.nodes - 1);
  real acc = 0;
  for (int i = 0; i < quad.nodes; ++i) {
    const real gamma = quad.gamma_min + h * i;
    const real w = (i == 0 || i == quad.nodes - 1) ? h / 2 : h;
    acc += w * integrand_per_coord(joint.rho, gamma);
  }
  DeltaEstimate est;
  est.delta = acc * joint.dim;
  est.tail_estimate = joint.dim * (std::abs(integrand_per_coord(joint.rho, quad.gamma_min)) +
                                   std::abs(integrand_per_coord(joint.rho, quad.gamma_max)));
  est.tail_warning = est.tail_estimate > quad.tail_tolerance;
  est.mc_samples = mc_samples;
  if (mc_samples > 0) {
    for (const real gamma : {real(-4), real(-2), real(0), real(2), real(4)}) {
      const MmseGap closed = analytic_mmse_gap(joint, gamma);
      const McMmse mc = mc_mmse_gap(joint, gamma, mc_samples,
                                    mix_seed(seed, static_cast<uint64_t>(gamma * 16 + 1024)));
      const real dev_c =
          std::abs(closed.conditional - mc.conditional.mean) / mc.conditional.std_error;
      const real dev_m =
          std::abs(closed.mismatched - mc.mismatched.mean) / mc.mismatched.std_error;
      est.max_mc_deviation_se = std::max({est.max_mc_deviation_se, dev_c, dev_m});
    }
  }
  return est;
}

ClosedForm closed_form_reference(const GaussianJoint& joint) {
  joint.validate();
  const real r2 = joint.rho * joint.rho;
  ClosedForm cf;
  cf.mutual_information = joint.dim * (-real(0.5) * std::log(1 - r2));
  cf.kl_reverse = joint.dim * (r2 / (1 - r2) + real(0.5) * std::log(1 - r2));
  cf.delta_closed = -cf.mutual_information - cf.kl_reverse;
  return cf;
}

MIReport verify_corollary(const GaussianJoint& joint, real tolerance,
                          const QuadratureSpec& quad, int mc_samples, uint64_t seed) {
  if (!(tolerance > 0)) throw ValidationError("tolerance must be positive");
  MIReport r;
  r.joint = joint;
  r.quadrature = quad;
  r.mc_samples = mc_samples;
  r.tolerance = tolerance;
  const DeltaEstimate est = estimate_delta(joint, quad, mc_samples, seed);
  const ClosedForm cf = closed_form_reference(joint);
  r.delta_numeric = est.delta;
  r.mutual_information = cf.mutual_information;
  r.kl_reverse = cf.kl_reverse;
  r.delta_closed = cf.delta_closed;
  r.abs_error = std::abs(est.delta - cf.delta_closed);
  r.tail_warning = est.tail_warning;
  r.max_mc_deviation_se = est.max_mc_deviation_se;
  r.passed = r.abs_error < tolerance;
  return r;
}

void write_report(const MIReport& r, std::ostream& os) {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "rho = %.17g\n"
                "dim = %d\n"
                "delta_numeric = %.17g\n"
                "mutual_information = %.17g\n"
                "kl_reverse = %.17g\n"
                "delta_closed = %.17g\n"
                "abs_error = %.17g\n"
                "tolerance = %.17g\n"
                "status = %s\n"
                "gamma_bounds = [%.17g, %.17g]\n"
                "quadrature_nodes = %d\n"
                "mc_samples = %d\n"
                "mc_max_deviation_se = %.17g\n"
                "tail_warning = %d\n",
                r.joint.rho, r.joint.dim, r.delta_numeric, r.mutual_information,
                r.kl_reverse, r.delta_closed, r.abs_error, r.tolerance,
                r.passed ? "pass" : "fail", r.quadrature.gamma_min, r.quadrature.gamma_max,
                r.quadrature.nodes, r.mc_samples, r.max_mc_deviation_se,
                r.tail_warning ? 1 : 0);
  os << buf;
}

std::vector<std::pair<real, real>> integrand_curve(const GaussianJoint& joint,
                                                   const QuadratureSpec& quad) {
  joint.validate();
  std::vector<std::pair<real, real>> pts;
  const int n = std::min(quad.nodes, 512);
  const real h = (quad.gamma_max - quad.gamma_min) / (n - 1);
  for (int i = 0; i < n; ++i) {
    const real gamma = quad.gamma_min + h * i;
    pts.emplace_back(gamma, joint.dim * integrand_per_coord(joint.rho, gamma));
  }
  return pts;
}

}  // namespace slotgen::mi
