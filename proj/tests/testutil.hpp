#pragma once

#include "slotgen/core/autograd.hpp"
#include "slotgen/core/rng.hpp"
#include "slotgen/core/tensor.hpp"

#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace slotgen::testutil {

inline Tensor random_tensor(std::vector<int> shape, Rng& rng, real scale = 1.0) {
  Tensor t(std::move(shape));
  for (auto& x : t.v) x = rng.normal() * scale;
  return t;
}

struct GradCheckResult {
  real max_rel_err = 0;
  int64_t worst_index = -1;
  real analytic = 0, numeric = 0;
  bool ok(real tol) const { return max_rel_err <= tol; }
};

// Central finite differences of a scalar function against an analytic
// gradient, with a small absolute floor so near-zero entries are compared
// sensibly.
inline GradCheckResult finite_diff_check(std::function<real(const Tensor&)> f,
                                         const Tensor& x0, const Tensor& analytic_grad,
                                         real h = 1e-5, real floor_abs = 1e-8) {
  GradCheckResult res;
  Tensor x = x0;
  for (int64_t i = 0; i < x.numel(); ++i) {
    const real orig = x[i];
    x[i] = orig + h;
    const real fp = f(x);
    x[i] = orig - h;
    const real fm = f(x);
    x[i] = orig;
    const real num = (fp - fm) / (2 * h);
    const real ana = analytic_grad[i];
    const real denom = std::max({std::abs(num), std::abs(ana), real(1e-4)});
    const real rel = std::abs(num - ana) <= floor_abs ? 0 : std::abs(num - ana) / denom;
    if (rel > res.max_rel_err) {
      res.max_rel_err = rel;
      res.worst_index = i;
      res.analytic = ana;
      res.numeric = num;
    }
  }
  return res;
}

// Finite-difference check of one input of a Var-valued expression. build()
// must construct the full graph from leaves each call.
inline GradCheckResult grad_check_input(
    std::function<ag::Var(const std::vector<ag::Var>&)> build,
    std::vector<Tensor> inputs, size_t which, real h = 1e-5) {
  auto eval = [&](const std::vector<Tensor>& vals, bool want_grad) {
    std::vector<ag::Var> leaves;
    for (size_t i = 0; i < vals.size(); ++i)
      leaves.push_back(ag::leaf(vals[i], want_grad && i == which));
    return std::pair<ag::Var, std::vector<ag::Var>>(build(leaves), leaves);
  };
  auto [root, leaves] = eval(inputs, true);
  ag::backward(root);
  Tensor analytic = leaves[which]->has_grad() ? leaves[which]->grad
                                              : Tensor::zeros(inputs[which].shape);
  auto f = [&](const Tensor& x) {
    std::vector<Tensor> vals = inputs;
    vals[which] = x;
    auto [r, ls] = eval(vals, false);
    return r->value.v[0];
  };
  return finite_diff_check(f, inputs[which], analytic, h);
}

}  // namespace slotgen::testutil

// ---- model-level helpers (kept here so every suite shares them) ----
#include "slotgen/model/params.hpp"

namespace slotgen::testutil {

inline void randomize_params(model::ParamStore& store, uint64_t seed, real scale = 0.25) {
  Rng rng(seed);
  for (const auto& name : store.names()) {
    auto& t = store.get(name)->value;
    for (auto& x : t.v) x = rng.normal() * scale;
  }
}

// Finite-difference check of d(build())/d(param) for one named parameter.
inline GradCheckResult param_grad_check(model::ParamStore& store, const std::string& pname,
                                        const std::function<ag::Var()>& build,
                                        real h = 1e-5) {
  store.zero_grads();
  ag::Var root = build();
  ag::backward(root);
  const ag::Var pv = store.get(pname);
  const Tensor analytic = pv->has_grad() ? pv->grad : Tensor::zeros(pv->value.shape);
  Tensor x0 = pv->value;
  auto f = [&](const Tensor& x) {
    pv->value = x;
    const real out = build()->value.v[0];
    pv->value = x0;
    return out;
  };
  return finite_diff_check(f, x0, analytic, h);
}

}  // namespace slotgen::testutil
