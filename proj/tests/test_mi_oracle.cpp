#include "doctest.h"

#include "slotgen/mi/mi_oracle.hpp"

#include <cmath>

using namespace slotgen;
using namespace slotgen::mi;

TEST_CASE("analytic mmse: independence, limits, hand value") {
  // rho = 0: conditioning is vacuous, both errors equal sigma(gamma)
  for (real gamma : {-3.0, 0.0, 2.5}) {
    const auto g = analytic_mmse_gap({1, 0.0}, gamma);
    const real sig = 1 / (1 + std::exp(-gamma));
    CHECK(g.conditional == doctest::Approx(sig).epsilon(1e-12));
    CHECK(g.mismatched == doctest::Approx(sig).epsilon(1e-12));
  }
  // gamma -> -inf: pure-noise channel recovers eps exactly
  const auto lo = analytic_mmse_gap({1, 0.5}, -40.0);
  CHECK(lo.conditional == doctest::Approx(0).epsilon(1e-12));
  CHECK(lo.mismatched == doctest::Approx(0).epsilon(1e-12));
  // rho=0.5, gamma=0: 0.5*0.75/(0.5*0.75+0.5) = 3/7
  const auto mid = analytic_mmse_gap({1, 0.5}, 0.0);
  CHECK(mid.conditional == doctest::Approx(3.0 / 7).epsilon(1e-12));
}

TEST_CASE("closed-form mmse cross-checked by Monte Carlo within 3 SE") {
  for (real rho : {0.3, 0.5, 0.8}) {
    for (real gamma : {-2.0, 0.0, 1.5}) {
      const auto closed = analytic_mmse_gap({1, rho}, gamma);
      const auto mc = mc_mmse_gap({1, rho}, gamma, 100000, 99);
      CHECK(std::abs(closed.conditional - mc.conditional.mean) <= 3 * mc.conditional.std_error);
      CHECK(std::abs(closed.mismatched - mc.mismatched.mean) <= 3 * mc.mismatched.std_error);
    }
  }
}

TEST_CASE("closed_form_reference values") {
  const auto z = closed_form_reference({1, 0.0});
  CHECK(z.mutual_information == 0);
  CHECK(z.kl_reverse == 0);
  CHECK(z.delta_closed == 0);

  const auto h = closed_form_reference({1, 0.5});
  CHECK(h.mutual_information == doctest::Approx(-0.5 * std::log(0.75)).epsilon(1e-12));
  CHECK(h.mutual_information == doctest::Approx(0.143841).epsilon(1e-4));
  CHECK(h.kl_reverse == doctest::Approx(1.0 / 3 + 0.5 * std::log(0.75)).epsilon(1e-12));
  CHECK(h.kl_reverse == doctest::Approx(0.189493).epsilon(1e-4));
  CHECK(h.delta_closed == doctest::Approx(-1.0 / 3).epsilon(1e-12));

  // Monotone divergence as rho -> 1
  real prev = 0;
  for (real rho : {0.5, 0.9, 0.99, 0.999}) {
    const auto cf = closed_form_reference({1, rho});
    CHECK(cf.mutual_information > prev);
    CHECK(cf.delta_closed < -prev);
    prev = cf.mutual_information;
  }
}

TEST_CASE("delta additivity in dimension") {
  const auto d1 = estimate_delta({1, 0.5}, {}, 0, 0);
  const auto d4 = estimate_delta({4, 0.5}, {}, 0, 0);
  CHECK(d4.delta == doctest::Approx(4 * d1.delta).epsilon(1e-12));
}

TEST_CASE("quadrature delta matches the closed form") {
  // rho = 0: integrand identically zero
  CHECK(std::abs(estimate_delta({1, 0.0}, {}, 0, 0).delta) < 1e-14);

  // The implementer-confirmed target: rho=0.5, D=1 -> -1/3
  const auto est = estimate_delta({1, 0.5}, {}, 100000, 7);
  CHECK(std::abs(est.delta - (-1.0 / 3)) < 1e-2);
  CHECK_FALSE(est.tail_warning);
  CHECK(est.max_mc_deviation_se <= 3.0);

  for (real rho : {0.3, 0.5, 0.8}) {
    const auto e = estimate_delta({1, rho}, {}, 0, 0);
    const auto cf = closed_form_reference({1, rho});
    CHECK(std::abs(e.delta - cf.delta_closed) < 1e-2);
  }
}

TEST_CASE("|delta| is nondecreasing in |rho|") {
  real prev = -1;
  for (real rho : {0.0, 0.2, 0.4, 0.6, 0.8, 0.9}) {
    const auto e = estimate_delta({1, rho}, {}, 0, 0);
    CHECK(std::abs(e.delta) >= prev);
    CHECK(e.delta <= 1e-15);  // delta <= 0 for independent negatives
    prev = std::abs(e.delta);
  }
}

TEST_CASE("constant cancellation: shifting both integrands leaves delta fixed") {
  // Adding any gamma-dependent constant to both MMSE integrands cancels in the
  // difference; equivalently the quadrature of (cond+c) - (mis+c) equals that
  // of cond - mis. Verified by integrating the difference against a shifted
  // reconstruction of the two sides.
  const GaussianJoint joint{1, 0.6};
  const QuadratureSpec quad{};
  const real h = (quad.gamma_max - quad.gamma_min) / (quad.nodes - 1);
  real direct = 0, shifted = 0;
  for (int i = 0; i < quad.nodes; ++i) {
    const real gamma = quad.gamma_min + h * i;
    const real w = (i == 0 || i == quad.nodes - 1) ? h / 2 : h;
    const auto g = analytic_mmse_gap(joint, gamma);
    const real c = std::sin(gamma);  // arbitrary gamma-dependent constant
    direct += w * real(0.5) * (g.conditional - g.mismatched);
    shifted += w * real(0.5) * ((g.conditional + c) - (g.mismatched + c));
  }
  CHECK(direct == doctest::Approx(shifted).epsilon(1e-12));
  CHECK(direct == doctest::Approx(estimate_delta(joint, quad, 0, 0).delta).epsilon(1e-12));
}

TEST_CASE("narrow bounds raise the tail warning and grow the error") {
  QuadratureSpec narrow;
  narrow.gamma_min = -2;
  narrow.gamma_max = 2;
  const auto r_narrow = verify_corollary({1, 0.5}, 1e-2, narrow, 0, 0);
  CHECK(r_narrow.tail_warning);
  const auto r_default = verify_corollary({1, 0.5}, 1e-2, {}, 0, 0);
  CHECK_FALSE(r_default.tail_warning);
  CHECK(r_narrow.abs_error > r_default.abs_error);
}

TEST_CASE("verify_corollary pass/fail behavior") {
  const auto pass = verify_corollary({1, 0.0}, 1e-10, {}, 0, 0);
  CHECK(pass.passed);
  CHECK(pass.abs_error < 1e-14);

  // Unreachable tolerance with coarse quadrature must fail honestly.
  QuadratureSpec coarse;
  coarse.nodes = 31;
  const auto fail = verify_corollary({1, 0.8}, 1e-9, coarse, 0, 0);
  CHECK_FALSE(fail.passed);

  for (real rho : {0.3, 0.5, 0.8}) {
    const auto r = verify_corollary({1, rho}, 1e-2, {}, 20000, 3);
    CHECK(r.passed);
    CHECK(r.max_mc_deviation_se <= 3.0);
  }
}

TEST_CASE("theorem consistency: delta + I + KL_rev ~ 0") {
  for (real rho : {0.3, 0.5, 0.8}) {
    for (int dim : {1, 4}) {
      const auto est = estimate_delta({dim, rho}, {}, 0, 0);
      const auto cf = closed_form_reference({dim, rho});
      CHECK(std::abs(est.delta + cf.mutual_information + cf.kl_reverse) < 1e-2);
    }
  }
}
