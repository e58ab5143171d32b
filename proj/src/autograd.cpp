#include "slotgen/core/autograd.hpp"

#include "slotgen/core/kernels.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <unordered_set>
#include <utility>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace slotgen::ag {

namespace {

Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> bw) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  bool rg = false;
  for (const auto& p : parents)
    if (p && p->requires_grad) rg = true;
  n->requires_grad = rg;
  if (rg) {
    n->parents = std::move(parents);
    n->backward_fn = std::move(bw);
  }
  return n;
}

inline bool wants_grad(const Var& p) { return p && p->requires_grad; }

inline void axpy(real* y, const real* x, int64_t n, real a = 1) {
  if (a == 1) {
    kernels::map2(y, x, y, n, [](real u, real v) { return u + v; });
  } else {
    for (int64_t i = 0; i < n; ++i) y[i] += a * x[i];
  }
}

int scratch_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

int scratch_tid() {
#ifdef _OPENMP
  return omp_get_thread_num();
#else
  return 0;
#endif
}

}  // namespace

Var leaf(Tensor value, bool requires_grad, std::string label) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  n->label = std::move(label);
  return n;
}

Var constant(Tensor value) { return leaf(std::move(value), false); }

Var detach(const Var& x) { return leaf(x->value, false, x->label); }

void backward(const Var& root) {
  if (root->value.numel() != 1)
    throw std::runtime_error("backward: root must be scalar");
  if (!root->requires_grad) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  visited.insert(root.get());
  stack.emplace_back(root.get(), 0);
  while (!stack.empty()) {
    Node* n = stack.back().first;
    size_t& idx = stack.back().second;
    if (idx < n->parents.size()) {
      Node* p = n->parents[idx++].get();
      if (p && p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  // Interior grads are per-invocation scratch: reset them so repeated
  // backward calls over shared subgraphs cannot leak stale contributions.
  // Leaf (parameter) grads keep accumulating across calls.
  for (Node* n : order)
    if (n->backward_fn) n->zero_grad();
  root->ensure_grad().v[0] = 1;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && n->has_grad()) n->backward_fn(*n);
  }
}

void check_finite(const Var& x, const std::string& context) {
  for (real v : x->value.v) {
    if (!std::isfinite(v))
      throw std::runtime_error("non-finite values in " + context);
  }
}

// ---- elementwise ----

Var add(const Var& a, const Var& b) {
  assert(a->value.same_shape(b->value));
  Tensor y(a->value.shape);
  kernels::map2(a->value.data(), b->value.data(), y.data(), y.numel(),
                [](real u, real v) { return u + v; });
  return make_op(std::move(y), {a, b}, [](Node& self) {
    for (int s = 0; s < 2; ++s) {
      auto& p = self.parents[s];
      if (wants_grad(p)) axpy(p->ensure_grad().data(), self.grad.data(), self.grad.numel());
    }
  });
}

Var sub(const Var& a, const Var& b) {
  assert(a->value.same_shape(b->value));
  Tensor y(a->value.shape);
  kernels::map2(a->value.data(), b->value.data(), y.data(), y.numel(),
                [](real u, real v) { return u - v; });
  return make_op(std::move(y), {a, b}, [](Node& self) {
    if (wants_grad(self.parents[0]))
      axpy(self.parents[0]->ensure_grad().data(), self.grad.data(), self.grad.numel());
    if (wants_grad(self.parents[1]))
      axpy(self.parents[1]->ensure_grad().data(), self.grad.data(), self.grad.numel(), -1);
  });
}

Var mul(const Var& a, const Var& b) {
  assert(a->value.same_shape(b->value));
  Tensor y(a->value.shape);
  kernels::map2(a->value.data(), b->value.data(), y.data(), y.numel(),
                [](real u, real v) { return u * v; });
  return make_op(std::move(y), {a, b}, [](Node& self) {
    const int64_t n = self.grad.numel();
    if (wants_grad(self.parents[0])) {
      real* da = self.parents[0]->ensure_grad().data();
      const real* g = self.grad.data();
      const real* bv = self.parents[1]->value.data();
      kernels::par_for(n, [=](int64_t i) { da[i] += g[i] * bv[i]; });
    }
    if (wants_grad(self.parents[1])) {
      real* db = self.parents[1]->ensure_grad().data();
      const real* g = self.grad.data();
      const real* av = self.parents[0]->value.data();
      kernels::par_for(n, [=](int64_t i) { db[i] += g[i] * av[i]; });
    }
  });
}

Var add_scalar(const Var& a, real s) {
  Tensor y(a->value.shape);
  kernels::map(a->value.data(), y.data(), y.numel(), [s](real u) { return u + s; });
  return make_op(std::move(y), {a}, [](Node& self) {
    if (wants_grad(self.parents[0]))
      axpy(self.parents[0]->ensure_grad().data(), self.grad.data(), self.grad.numel());
  });
}

Var scale(const Var& a, real s) {
  Tensor y(a->value.shape);
  kernels::map(a->value.data(), y.data(), y.numel(), [s](real u) { return u * s; });
  return make_op(std::move(y), {a}, [s](Node& self) {
    if (wants_grad(self.parents[0]))
      axpy(self.parents[0]->ensure_grad().data(), self.grad.data(), self.grad.numel(), s);
  });
}

Var neg(const Var& a) { return scale(a, -1); }

Var square(const Var& a) {
  Tensor y(a->value.shape);
  kernels::map(a->value.data(), y.data(), y.numel(), [](real u) { return u * u; });
  return make_op(std::move(y), {a}, [](Node& self) {
    if (!wants_grad(self.parents[0])) return;
    real* da = self.parents[0]->ensure_grad().data();
    const real* x = self.parents[0]->value.data();
    const real* g = self.grad.data();
    const int64_t n = self.grad.numel();
    kernels::par_for(n, [=](int64_t i) { da[i] += 2 * x[i] * g[i]; });
  });
}

Var sigmoid(const Var& a) {
  Tensor y(a->value.shape);
  kernels::map(a->value.data(), y.data(), y.numel(),
               [](real u) { return real(1) / (real(1) + std::exp(-u)); });
  return make_op(std::move(y), {a}, [](Node& self) {
    if (!wants_grad(self.parents[0])) return;
    real* da = self.parents[0]->ensure_grad().data();
    const real* yv = self.value.data();
    const real* g = self.grad.data();
    const int64_t n = self.grad.numel();
    kernels::par_for(n, [=](int64_t i) { da[i] += yv[i] * (1 - yv[i]) * g[i]; });
  });
}

Var tanh_(const Var& a) {
  Tensor y(a->value.shape);
  kernels::map(a->value.data(), y.data(), y.numel(), [](real u) { return std::tanh(u); });
  return make_op(std::move(y), {a}, [](Node& self) {
    if (!wants_grad(self.parents[0])) return;
    real* da = self.parents[0]->ensure_grad().data();
    const real* yv = self.value.data();
    const real* g = self.grad.data();
    const int64_t n = self.grad.numel();
    kernels::par_for(n, [=](int64_t i) { da[i] += (1 - yv[i] * yv[i]) * g[i]; });
  });
}

Var silu(const Var& a) {
  Tensor y(a->value.shape);
  kernels::map(a->value.data(), y.data(), y.numel(), [](real u) {
    return u / (real(1) + std::exp(-u));
  });
  return make_op(std::move(y), {a}, [](Node& self) {
    if (!wants_grad(self.parents[0])) return;
    real* da = self.parents[0]->ensure_grad().data();
    const real* x = self.parents[0]->value.data();
    const real* g = self.grad.data();
    const int64_t n = self.grad.numel();
    kernels::par_for(n, [=](int64_t i) {
      const real s = real(1) / (real(1) + std::exp(-x[i]));
      da[i] += s * (1 + x[i] * (1 - s)) * g[i];
    });
  });
}

Var exp_(const Var& a) {
  Tensor y(a->value.shape);
  kernels::map(a->value.data(), y.data(), y.numel(), [](real u) { return std::exp(u); });
  return make_op(std::move(y), {a}, [](Node& self) {
    if (!wants_grad(self.parents[0])) return;
    real* da = self.parents[0]->ensure_grad().data();
    const real* yv = self.value.data();
    const real* g = self.grad.data();
    const int64_t n = self.grad.numel();
    kernels::par_for(n, [=](int64_t i) { da[i] += yv[i] * g[i]; });
  });
}


Var log_(const Var& a) {
  Tensor y(a->value.shape);
  kernels::map(a->value.data(), y.data(), y.numel(), [](real u) { return std::log(u); });
  return make_op(std::move(y), {a}, [](Node& self) {
    if (!wants_grad(self.parents[0])) return;
    real* da = self.parents[0]->ensure_grad().data();
    const real* x = self.parents[0]->value.data();
    const real* g = self.grad.data();
    const int64_t n = self.grad.numel();
    for (int64_t i = 0; i < n; ++i) da[i] += g[i] / x[i];
  });
}

// ---- reductions ----

Var sum_all(const Var& a) {
  Tensor y({1});
  y.v[0] = kernels::sum(a->value.data(), a->value.numel());
  return make_op(std::move(y), {a}, [](Node& self) {
    if (!wants_grad(self.parents[0])) return;
    real* da = self.parents[0]->ensure_grad().data();
    const real g = self.grad.v[0];
    const int64_t n = self.parents[0]->value.numel();
    kernels::par_for(n, [=](int64_t i) { da[i] += g; });
  });
}

Var mean_all(const Var& a) {
  Tensor y({1});
  const int64_t n = a->value.numel();
  y.v[0] = kernels::sum(a->value.data(), n) / static_cast<real>(n);
  return make_op(std::move(y), {a}, [n](Node& self) {
    if (!wants_grad(self.parents[0])) return;
    real* da = self.parents[0]->ensure_grad().data();
    const real g = self.grad.v[0] / static_cast<real>(n);
    kernels::par_for(n, [=](int64_t i) { da[i] += g; });
  });
}

// ---- shape ----

Var reshape(const Var& a, std::vector<int> shape) {
  assert(Tensor::numel_of(shape) == a->value.numel());
  Tensor y = a->value.reshaped(std::move(shape));
  return make_op(std::move(y), {a}, [](Node& self) {
    if (wants_grad(self.parents[0]))
      axpy(self.parents[0]->ensure_grad().data(), self.grad.data(), self.grad.numel());
  });
}

Var transpose_last2(const Var& a) {
  const auto& s = a->value.shape;
  assert(s.size() >= 2);
  const int m = s[s.size() - 2], n = s[s.size() - 1];
  const int64_t batches = a->value.numel() / (static_cast<int64_t>(m) * n);
  std::vector<int> ys = s;
  std::swap(ys[ys.size() - 2], ys[ys.size() - 1]);
  Tensor y(ys);
  for (int64_t b = 0; b < batches; ++b) {
    const real* xb = a->value.data() + b * m * n;
    real* yb = y.data() + b * m * n;
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) yb[static_cast<int64_t>(j) * m + i] = xb[static_cast<int64_t>(i) * n + j];
  }
  return make_op(std::move(y), {a}, [m, n, batches](Node& self) {
    if (!wants_grad(self.parents[0])) return;
    real* da = self.parents[0]->ensure_grad().data();
    const real* g = self.grad.data();
    for (int64_t b = 0; b < batches; ++b) {
      const real* gb = g + b * m * n;
      real* db = da + b * m * n;
      for (int j = 0; j < n; ++j)
        for (int i = 0; i < m; ++i) db[static_cast<int64_t>(i) * n + j] += gb[static_cast<int64_t>(j) * m + i];
    }
  });
}

Var slice_last(const Var& a, int start, int len) {
  const int d = a->value.dim(-1);
  assert(start >= 0 && start + len <= d);
  const int64_t rows = a->value.numel() / d;
  std::vector<int> ys = a->value.shape;
  ys.back() = len;
  Tensor y(ys);
  for (int64_t r = 0; r < rows; ++r)
    std::memcpy(y.data() + r * len, a->value.data() + r * d + start,
                sizeof(real) * static_cast<size_t>(len));
  return make_op(std::move(y), {a}, [start, len, d, rows](Node& self) {
    if (!wants_grad(self.parents[0])) return;
    real* da = self.parents[0]->ensure_grad().data();
    const real* g = self.grad.data();
    for (int64_t r = 0; r < rows; ++r)
      for (int j = 0; j < len; ++j) da[r * d + start + j] += g[r * len + j];
  });
}

Var slice_rows(const Var& a, int start, int len) {
  assert(a->value.ndim() == 2);
  const int d = a->value.dim(1);
  assert(start >= 0 && start + len <= a->value.dim(0));
  Tensor y({len, d});
  std::memcpy(y.data(), a->value.data() + static_cast<int64_t>(start) * d,
              sizeof(real) * static_cast<size_t>(len) * d);
  return make_op(std::move(y), {a}, [start, len, d](Node& self) {
    if (!wants_grad(self.parents[0])) return;
    axpy(self.parents[0]->ensure_grad().data() + static_cast<int64_t>(start) * d,
         self.grad.data(), static_cast<int64_t>(len) * d);
  });
}

Var concat_last(const Var& a, const Var& b) {
  const int da = a->value.dim(-1), db = b->value.dim(-1);
  const int64_t rows = a->value.numel() / da;
  assert(b->value.numel() / db == rows);
  std::vector<int> ys = a->value.shape;
  ys.back() = da + db;
  Tensor y(ys);
  for (int64_t r = 0; r < rows; ++r) {
    std::memcpy(y.data() + r * (da + db), a->value.data() + r * da,
                sizeof(real) * static_cast<size_t>(da));
    std::memcpy(y.data() + r * (da + db) + da, b->value.data() + r * db,
                sizeof(real) * static_cast<size_t>(db));
  }
  return make_op(std::move(y), {a, b}, [da, db, rows](Node& self) {
    const real* g = self.grad.data();
    if (wants_grad(self.parents[0])) {
      real* pa = self.parents[0]->ensure_grad().data();
      for (int64_t r = 0; r < rows; ++r)
        for (int j = 0; j < da; ++j) pa[r * da + j] += g[r * (da + db) + j];
    }
    if (wants_grad(self.parents[1])) {
      real* pb = self.parents[1]->ensure_grad().data();
      for (int64_t r = 0; r < rows; ++r)
        for (int j = 0; j < db; ++j) pb[r * db + j] += g[r * (da + db) + da + j];
    }
  });
}

namespace {
// Concat along axis 1 of effectively [B, T, inner] blocks.
Var concat_blocks(const Var& a, const Var& b, int ba, int ta, int tb, int64_t inner,
                  std::vector<int> out_shape) {
  Tensor y(std::move(out_shape));
  const int64_t block_a = ta * inner, block_b = tb * inner;
  for (int i = 0; i < ba; ++i) {
    std::memcpy(y.data() + i * (block_a + block_b), a->value.data() + i * block_a,
                sizeof(real) * static_cast<size_t>(block_a));
    std::memcpy(y.data() + i * (block_a + block_b) + block_a,
                b->value.data() + i * block_b, sizeof(real) * static_cast<size_t>(block_b));
  }
  return make_op(std::move(y), {a, b}, [ba, block_a, block_b](Node& self) {
    const real* g = self.grad.data();
    if (wants_grad(self.parents[0])) {
      real* pa = self.parents[0]->ensure_grad().data();
      for (int i = 0; i < ba; ++i)
        axpy(pa + i * block_a, g + i * (block_a + block_b), block_a);
    }
    if (wants_grad(self.parents[1])) {
      real* pb = self.parents[1]->ensure_grad().data();
      for (int i = 0; i < ba; ++i)
        axpy(pb + i * block_b, g + i * (block_a + block_b) + block_a, block_b);
    }
  });
}
}  // namespace

Var concat_axis1(const Var& a, const Var& b) {
  const auto& sa = a->value.shape;
  const auto& sb = b->value.shape;
  assert(sa.size() == 3 && sb.size() == 3 && sa[0] == sb[0] && sa[2] == sb[2]);
  return concat_blocks(a, b, sa[0], sa[1], sb[1], sa[2], {sa[0], sa[1] + sb[1], sa[2]});
}

Var concat_channels(const Var& a, const Var& b) {
  const auto& sa = a->value.shape;
  const auto& sb = b->value.shape;
  assert(sa.size() == 4 && sb.size() == 4 && sa[0] == sb[0] && sa[2] == sb[2] && sa[3] == sb[3]);
  return concat_blocks(a, b, sa[0], sa[1], sb[1], static_cast<int64_t>(sa[2]) * sa[3],
                       {sa[0], sa[1] + sb[1], sa[2], sa[3]});
}

Var expand_batch(const Var& a, int batch) {
  std::vector<int> ys;
  ys.push_back(batch);
  for (int d : a->value.shape) ys.push_back(d);
  Tensor y(ys);
  const int64_t n = a->value.numel();
  for (int i = 0; i < batch; ++i)
    std::memcpy(y.data() + static_cast<int64_t>(i) * n, a->value.data(),
                sizeof(real) * static_cast<size_t>(n));
  return make_op(std::move(y), {a}, [batch, n](Node& self) {
    if (!wants_grad(self.parents[0])) return;
    real* da = self.parents[0]->ensure_grad().data();
    const real* g = self.grad.data();
    for (int i = 0; i < batch; ++i) axpy(da, g + static_cast<int64_t>(i) * n, n);
  });
}

Var permute_batch(const Var& a, std::vector<int> perm) {
  const int b = a->value.dim(0);
  assert(static_cast<int>(perm.size()) == b);
  const int64_t n = a->value.numel() / b;
  Tensor y(a->value.shape);
  for (int i = 0; i < b; ++i)
    std::memcpy(y.data() + i * n, a->value.data() + static_cast<int64_t>(perm[i]) * n,
                sizeof(real) * static_cast<size_t>(n));
  return make_op(std::move(y), {a}, [perm = std::move(perm), n](Node& self) {
    if (!wants_grad(self.parents[0])) return;
    real* da = self.parents[0]->ensure_grad().data();
    const real* g = self.grad.data();
    for (size_t i = 0; i < perm.size(); ++i)
      axpy(da + static_cast<int64_t>(perm[i]) * n, g + static_cast<int64_t>(i) * n, n);
  });
}

Var select_rows(const Tensor& mask, const Var& a_rows, const Var& b_rows) {
  const auto& s = a_rows->value.shape;
  assert(s.size() == 3 && b_rows->value.same_shape(a_rows->value));
  const int b = s[0], t = s[1], d = s[2];
  assert(mask.numel() == static_cast<int64_t>(b) * t);
  Tensor y(s);
  for (int64_t r = 0; r < static_cast<int64_t>(b) * t; ++r) {
    const real* src = (mask[r] != 0 ? b_rows : a_rows)->value.data() + r * d;
    std::memcpy(y.data() + r * d, src, sizeof(real) * static_cast<size_t>(d));
  }
  return make_op(std::move(y), {a_rows, b_rows}, [mask, d](Node& self) {
    const real* g = self.grad.data();
    const int64_t rows = mask.numel();
    for (int64_t r = 0; r < rows; ++r) {
      auto& p = self.parents[mask[r] != 0 ? 1 : 0];
      if (wants_grad(p)) axpy(p->ensure_grad().data() + r * d, g + r * d, d);
    }
  });
}

// ---- linear algebra ----

Var linear(const Var& x, const Var& w, const Var& b) {
  const auto& ws = w->value.shape;
  assert(ws.size() == 2);
  const int out = ws[0], in = ws[1];
  assert(x->value.dim(-1) == in);
  const int64_t rows = x->value.numel() / in;
  std::vector<int> ys = x->value.shape;
  ys.back() = out;
  Tensor y(ys);
  kernels::gemm(x->value.data(), w->value.data(), y.data(), static_cast<int>(rows),
                out, in, false, true, 0);
  if (b) {
    assert(b->value.numel() == out);
    const real* bv = b->value.data();
#pragma omp parallel for schedule(static)
    for (int64_t r = 0; r < rows; ++r) {
      real* yr = y.data() + r * out;
      for (int j = 0; j < out; ++j) yr[j] += bv[j];
    }
  }
  return make_op(std::move(y), {x, w, b}, [rows, out, in](Node& self) {
    const real* g = self.grad.data();
    const auto& xv = self.parents[0]->value;
    const auto& wv = self.parents[1]->value;
    if (wants_grad(self.parents[0])) {
      kernels::gemm(g, wv.data(), self.parents[0]->ensure_grad().data(),
                    static_cast<int>(rows), in, out, false, false, 1);
    }
    if (wants_grad(self.parents[1])) {
      kernels::gemm(g, xv.data(), self.parents[1]->ensure_grad().data(), out, in,
                    static_cast<int>(rows), true, false, 1);
    }
    if (self.parents[2] && self.parents[2]->requires_grad) {
      real* db = self.parents[2]->ensure_grad().data();
      for (int64_t r = 0; r < rows; ++r) {
        const real* gr = g + r * out;
        for (int j = 0; j < out; ++j) db[j] += gr[j];
      }
    }
  });
}

namespace {

Var bmm_impl(const Var& a, const Var& b, bool trans_b) {
  const auto& sa = a->value.shape;
  const auto& sb = b->value.shape;
  assert(sa.size() == 3 && sb.size() == 3 && sa[0] == sb[0]);
  const int batch = sa[0], m = sa[1], k = sa[2];
  const int n = trans_b ? sb[1] : sb[2];
  assert(trans_b ? sb[2] == k : sb[1] == k);
  Tensor y({batch, m, n});
  const int64_t as = static_cast<int64_t>(m) * k;
  const int64_t bs = static_cast<int64_t>(sb[1]) * sb[2];
  const int64_t ys = static_cast<int64_t>(m) * n;
#pragma omp parallel for schedule(static)
  for (int i = 0; i < batch; ++i) {
    kernels::gemm(a->value.data() + i * as, b->value.data() + i * bs, y.data() + i * ys,
                  m, n, k, false, trans_b, 0, /*parallel=*/false);
  }
  return make_op(std::move(y), {a, b}, [batch, m, n, k, as, bs, ys, trans_b](Node& self) {
    const real* g = self.grad.data();
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    const bool ga = wants_grad(self.parents[0]);
    const bool gb = wants_grad(self.parents[1]);
    real* da = ga ? self.parents[0]->ensure_grad().data() : nullptr;
    real* db = gb ? self.parents[1]->ensure_grad().data() : nullptr;
#pragma omp parallel for schedule(static)
    for (int i = 0; i < batch; ++i) {
      const real* gi = g + i * ys;
      if (ga) {
        // dA = dY * op(B)^T
        if (!trans_b) {
          kernels::gemm(gi, bv.data() + i * bs, da + i * as, m, k, n, false, true, 1, false);
        } else {
          kernels::gemm(gi, bv.data() + i * bs, da + i * as, m, k, n, false, false, 1, false);
        }
      }
      if (gb) {
        if (!trans_b) {
          // dB = A^T * dY  [k,n]
          kernels::gemm(av.data() + i * as, gi, db + i * bs, k, n, m, true, false, 1, false);
        } else {
          // dB = dY^T * A  [n,k]
          kernels::gemm(gi, av.data() + i * as, db + i * bs, n, k, m, true, false, 1, false);
        }
      }
    }
  });
}

}  // namespace

Var bmm_nn(const Var& a, const Var& b) { return bmm_impl(a, b, false); }
Var bmm_nt(const Var& a, const Var& b) { return bmm_impl(a, b, true); }

// ---- normalization / softmax ----

Var softmax_last(const Var& x) {
  const int cols = x->value.dim(-1);
  const int64_t rows = x->value.numel() / cols;
  Tensor y(x->value.shape);
  kernels::softmax_rows(x->value.data(), y.data(), rows, cols);
  return make_op(std::move(y), {x}, [rows, cols](Node& self) {
    if (!wants_grad(self.parents[0])) return;
    kernels::softmax_rows_backward(self.value.data(), self.grad.data(),
                                   self.parents[0]->ensure_grad().data(), rows, cols);
  });
}

Var layernorm(const Var& x, const Var& gamma, const Var& beta, real eps) {
  const int cols = x->value.dim(-1);
  const int64_t rows = x->value.numel() / cols;
  assert(!gamma || gamma->value.numel() == cols);
  assert(!beta || beta->value.numel() == cols);
  Tensor y(x->value.shape);
  auto mean = std::make_shared<std::vector<real>>(rows);
  auto rstd = std::make_shared<std::vector<real>>(rows);
  kernels::layernorm_rows(x->value.data(), gamma ? gamma->value.data() : nullptr,
                          beta ? beta->value.data() : nullptr, y.data(), mean->data(),
                          rstd->data(), rows, cols, eps);
  return make_op(std::move(y), {x, gamma, beta}, [rows, cols, mean, rstd](Node& self) {
    const auto& xv = self.parents[0]->value;
    const Var& gv = self.parents[1];
    real* dgamma = (gv && gv->requires_grad) ? gv->ensure_grad().data() : nullptr;
    const Var& bv = self.parents[2];
    real* dbeta = (bv && bv->requires_grad) ? bv->ensure_grad().data() : nullptr;
    real* dx = wants_grad(self.parents[0]) ? self.parents[0]->ensure_grad().data() : nullptr;
    if (!dx && !dgamma && !dbeta) return;
    Tensor dx_scratch;
    if (!dx) {
      dx_scratch = Tensor::zeros(xv.shape);
      dx = dx_scratch.data();
    }
    kernels::layernorm_rows_backward(xv.data(), gv ? gv->value.data() : nullptr,
                                     self.grad.data(), mean->data(), rstd->data(), dx,
                                     dgamma, dbeta, rows, cols);
  });
}

Var div_rowsum(const Var& x, real eps) {
  const int cols = x->value.dim(-1);
  const int64_t rows = x->value.numel() / cols;
  Tensor y(x->value.shape);
  auto sums = std::make_shared<std::vector<real>>(rows);
  for (int64_t r = 0; r < rows; ++r) {
    const real* xr = x->value.data() + r * cols;
    real s = 0;
    for (int j = 0; j < cols; ++j) s += xr[j];
    (*sums)[r] = s + eps;
    real* yr = y.data() + r * cols;
    const real inv = real(1) / (*sums)[r];
    for (int j = 0; j < cols; ++j) yr[j] = xr[j] * inv;
  }
  return make_op(std::move(y), {x}, [rows, cols, sums](Node& self) {
    if (!wants_grad(self.parents[0])) return;
    real* dx = self.parents[0]->ensure_grad().data();
    const real* g = self.grad.data();
    const real* xv = self.parents[0]->value.data();
    for (int64_t r = 0; r < rows; ++r) {
      const real t = real(1) / (*sums)[r];
      const real* gr = g + r * cols;
      const real* xr = xv + r * cols;
      real dot = 0;
      for (int j = 0; j < cols; ++j) dot += gr[j] * xr[j];
      const real corr = dot * t * t;
      real* dr = dx + r * cols;
      for (int j = 0; j < cols; ++j) dr[j] += gr[j] * t - corr;
    }
  });
}

// ---- conv / spatial ----

namespace {
struct ConvDims {
  int b, c, h, w, o, kh, kw, stride, pad, pad_mode, oh, ow;
  int64_t ckk() const { return static_cast<int64_t>(c) * kh * kw; }
  int64_t patch() const { return static_cast<int64_t>(oh) * ow; }
};
}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad, int pad_mode) {
  const auto& xs = x->value.shape;
  const auto& ws = w->value.shape;
  assert(xs.size() == 4 && ws.size() == 4 && ws[1] == xs[1]);
  ConvDims d;
  d.b = xs[0]; d.c = xs[1]; d.h = xs[2]; d.w = xs[3];
  d.o = ws[0]; d.kh = ws[2]; d.kw = ws[3];
  d.stride = stride; d.pad = pad; d.pad_mode = pad_mode;
  d.oh = (d.h + 2 * pad - d.kh) / stride + 1;
  d.ow = (d.w + 2 * pad - d.kw) / stride + 1;
  Tensor y({d.b, d.o, d.oh, d.ow});
  const int64_t xs_stride = static_cast<int64_t>(d.c) * d.h * d.w;
  const int64_t ys_stride = static_cast<int64_t>(d.o) * d.patch();
  {
    std::vector<std::vector<real>> scratch(static_cast<size_t>(scratch_threads()));
#pragma omp parallel for schedule(static)
    for (int i = 0; i < d.b; ++i) {
      auto& cols = scratch[static_cast<size_t>(scratch_tid())];
      cols.resize(static_cast<size_t>(d.ckk() * d.patch()));
      kernels::im2col(x->value.data() + i * xs_stride, cols.data(), d.c, d.h, d.w,
                      d.kh, d.kw, d.stride, d.pad, d.pad_mode);
      kernels::gemm(w->value.data(), cols.data(), y.data() + i * ys_stride, d.o,
                    static_cast<int>(d.patch()), static_cast<int>(d.ckk()), false,
                    false, 0, /*parallel=*/false);
    }
  }
  if (b) {
    assert(b->value.numel() == d.o);
    const real* bv = b->value.data();
    const int64_t patch = d.patch();
#pragma omp parallel for schedule(static)
    for (int i = 0; i < d.b; ++i) {
      real* yi = y.data() + i * ys_stride;
      for (int oc = 0; oc < d.o; ++oc)
        for (int64_t p = 0; p < patch; ++p) yi[oc * patch + p] += bv[oc];
    }
  }
  return make_op(std::move(y), {x, w, b}, [d, xs_stride, ys_stride](Node& self) {
    const real* g = self.grad.data();
    const auto& xv = self.parents[0]->value;
    const auto& wv = self.parents[1]->value;
    const bool gx = wants_grad(self.parents[0]);
    const bool gw = wants_grad(self.parents[1]);
    const bool gb = self.parents[2] && self.parents[2]->requires_grad;
    const int64_t cols_n = d.ckk() * d.patch();
    if (gx) {
      real* dx = self.parents[0]->ensure_grad().data();
      std::vector<std::vector<real>> scratch(static_cast<size_t>(scratch_threads()));
#pragma omp parallel for schedule(static)
      for (int i = 0; i < d.b; ++i) {
        auto& dcols = scratch[static_cast<size_t>(scratch_tid())];
        dcols.resize(static_cast<size_t>(cols_n));
        kernels::gemm(wv.data(), g + i * ys_stride, dcols.data(),
                      static_cast<int>(d.ckk()), static_cast<int>(d.patch()), d.o,
                      true, false, 0, /*parallel=*/false);
        // col2im parallelizes over channels internally; avoid nesting.
        const int oh = d.oh, ow = d.ow;
        (void)oh; (void)ow;
        real* dxi = dx + i * xs_stride;
        const real* dc = dcols.data();
        int64_t row = 0;
        const int64_t patch = d.patch();
        for (int ci = 0; ci < d.c; ++ci) {
          real* xc = dxi + static_cast<int64_t>(ci) * d.h * d.w;
          for (int ky = 0; ky < d.kh; ++ky)
            for (int kx = 0; kx < d.kw; ++kx, ++row) {
              const real* src = dc + row * patch;
              int64_t p = 0;
              for (int oy = 0; oy < d.oh; ++oy) {
                int iy = oy * d.stride - d.pad + ky;
                if (d.pad_mode == 1) iy = iy < 0 ? -iy : (iy >= d.h ? 2 * d.h - 2 - iy : iy);
                const bool y_ok = iy >= 0 && iy < d.h;
                for (int ox = 0; ox < d.ow; ++ox, ++p) {
                  int ix = ox * d.stride - d.pad + kx;
                  if (d.pad_mode == 1) ix = ix < 0 ? -ix : (ix >= d.w ? 2 * d.w - 2 - ix : ix);
                  if (y_ok && ix >= 0 && ix < d.w) xc[iy * d.w + ix] += src[p];
                }
              }
            }
        }
      }
    }
    if (gw) {
      real* dw = self.parents[1]->ensure_grad().data();
      // Fixed-size batch chunks with per-chunk partials, combined in chunk
      // order: parallel but independent of the thread count.
      constexpr int kChunk = 8;
      const int nchunks = (d.b + kChunk - 1) / kChunk;
      const int64_t wn = static_cast<int64_t>(d.o) * d.ckk();
      std::vector<std::vector<real>> partials(static_cast<size_t>(nchunks));
#pragma omp parallel for schedule(static)
      for (int ci = 0; ci < nchunks; ++ci) {
        auto& part = partials[static_cast<size_t>(ci)];
        part.assign(static_cast<size_t>(wn), real(0));
        std::vector<real> cols(static_cast<size_t>(cols_n));
        const int lo = ci * kChunk;
        const int hi = std::min(d.b, lo + kChunk);
        for (int i = lo; i < hi; ++i) {
          kernels::im2col(xv.data() + i * xs_stride, cols.data(), d.c, d.h, d.w, d.kh,
                          d.kw, d.stride, d.pad, d.pad_mode);
          kernels::gemm(g + i * ys_stride, cols.data(), part.data(), d.o,
                        static_cast<int>(d.ckk()), static_cast<int>(d.patch()), false,
                        true, 1, /*parallel=*/false);
        }
      }
      for (int ci = 0; ci < nchunks; ++ci)
        for (int64_t j = 0; j < wn; ++j) dw[j] += partials[static_cast<size_t>(ci)][j];
    }
    if (gb) {
      real* db = self.parents[2]->ensure_grad().data();
      const int64_t patch = d.patch();
      for (int i = 0; i < d.b; ++i) {
        const real* gi = g + i * ys_stride;
        for (int oc = 0; oc < d.o; ++oc) {
          real s = 0;
          for (int64_t p = 0; p < patch; ++p) s += gi[oc * patch + p];
          db[oc] += s;
        }
      }
    }
  });
}

Var upsample_nearest2(const Var& x) {
  const auto& s = x->value.shape;
  assert(s.size() == 4);
  const int b = s[0], c = s[1], h = s[2], w = s[3];
  Tensor y({b, c, 2 * h, 2 * w});
  const int64_t planes = static_cast<int64_t>(b) * c;
#pragma omp parallel for schedule(static)
  for (int64_t pl = 0; pl < planes; ++pl) {
    const real* xp = x->value.data() + pl * h * w;
    real* yp = y.data() + pl * 4 * h * w;
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        const real v = xp[i * w + j];
        real* o = yp + (2 * i) * 2 * w + 2 * j;
        o[0] = v;
        o[1] = v;
        o[2 * w] = v;
        o[2 * w + 1] = v;
      }
  }
  return make_op(std::move(y), {x}, [planes, h, w](Node& self) {
    if (!wants_grad(self.parents[0])) return;
    real* dx = self.parents[0]->ensure_grad().data();
    const real* g = self.grad.data();
#pragma omp parallel for schedule(static)
    for (int64_t pl = 0; pl < planes; ++pl) {
      real* dxp = dx + pl * h * w;
      const real* gp = g + pl * 4 * h * w;
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
          const real* o = gp + (2 * i) * 2 * w + 2 * j;
          dxp[i * w + j] += o[0] + o[1] + o[2 * w] + o[2 * w + 1];
        }
    }
  });
}

Var unpatchify(const Var& x, int p) {
  const auto& s = x->value.shape;
  assert(s.size() == 4 && s[1] % (p * p) == 0);
  const int b = s[0], cin = s[1], h = s[2], w = s[3];
  const int cout = cin / (p * p);
  Tensor y({b, cout, h * p, w * p});
  const int hw = h * w;
  for (int bi = 0; bi < b; ++bi) {
    const real* xb = x->value.data() + static_cast<int64_t>(bi) * cin * hw;
    real* yb = y.data() + static_cast<int64_t>(bi) * cout * hw * p * p;
    for (int co = 0; co < cout; ++co)
      for (int py = 0; py < p; ++py)
        for (int px = 0; px < p; ++px) {
          const real* src = xb + static_cast<int64_t>((co * p + py) * p + px) * hw;
          for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j)
              yb[(static_cast<int64_t>(co) * h * p + i * p + py) * (w * p) + j * p + px] =
                  src[i * w + j];
        }
  }
  return make_op(std::move(y), {x}, [b, cin, cout, h, w, p, hw](Node& self) {
    if (!wants_grad(self.parents[0])) return;
    real* dx = self.parents[0]->ensure_grad().data();
    const real* g = self.grad.data();
    for (int bi = 0; bi < b; ++bi) {
      real* dxb = dx + static_cast<int64_t>(bi) * cin * hw;
      const real* gb = g + static_cast<int64_t>(bi) * cout * hw * p * p;
      for (int co = 0; co < cout; ++co)
        for (int py = 0; py < p; ++py)
          for (int px = 0; px < p; ++px) {
            real* dst = dxb + static_cast<int64_t>((co * p + py) * p + px) * hw;
            for (int i = 0; i < h; ++i)
              for (int j = 0; j < w; ++j)
                dst[i * w + j] +=
                    gb[(static_cast<int64_t>(co) * h * p + i * p + py) * (w * p) + j * p + px];
          }
    }
  });
}

Var add_channel_bias(const Var& x, const Var& t) {
  const auto& s = x->value.shape;
  assert(s.size() == 4 && t->value.ndim() == 2 && t->value.dim(0) == s[0] &&
         t->value.dim(1) == s[1]);
  const int b = s[0], c = s[1];
  const int64_t hw = static_cast<int64_t>(s[2]) * s[3];
  Tensor y(x->value.shape);
#pragma omp parallel for schedule(static)
  for (int64_t pl = 0; pl < static_cast<int64_t>(b) * c; ++pl) {
    const real tv = t->value[pl];
    const real* xp = x->value.data() + pl * hw;
    real* yp = y.data() + pl * hw;
    for (int64_t i = 0; i < hw; ++i) yp[i] = xp[i] + tv;
  }
  return make_op(std::move(y), {x, t}, [b, c, hw](Node& self) {
    const real* g = self.grad.data();
    if (wants_grad(self.parents[0]))
      axpy(self.parents[0]->ensure_grad().data(), g, self.grad.numel());
    if (wants_grad(self.parents[1])) {
      real* dt = self.parents[1]->ensure_grad().data();
      for (int64_t pl = 0; pl < static_cast<int64_t>(b) * c; ++pl) {
        const real* gp = g + pl * hw;
        real s = 0;
        for (int64_t i = 0; i < hw; ++i) s += gp[i];
        dt[pl] += s;
      }
    }
  });
}


Var mul_channel_bias(const Var& x, const Var& t) {
  const auto& s = x->value.shape;
  assert(s.size() == 4 && t->value.ndim() == 2 && t->value.dim(0) == s[0] &&
         t->value.dim(1) == s[1]);
  const int b = s[0], c = s[1];
  const int64_t hw = static_cast<int64_t>(s[2]) * s[3];
  Tensor y(x->value.shape);
#pragma omp parallel for schedule(static)
  for (int64_t pl = 0; pl < static_cast<int64_t>(b) * c; ++pl) {
    const real tv = t->value[pl];
    const real* xp = x->value.data() + pl * hw;
    real* yp = y.data() + pl * hw;
    for (int64_t i = 0; i < hw; ++i) yp[i] = xp[i] * tv;
  }
  return make_op(std::move(y), {x, t}, [b, c, hw](Node& self) {
    const real* g = self.grad.data();
    const auto& xv = self.parents[0]->value;
    const auto& tv = self.parents[1]->value;
    if (wants_grad(self.parents[0])) {
      real* dx = self.parents[0]->ensure_grad().data();
#pragma omp parallel for schedule(static)
      for (int64_t pl = 0; pl < static_cast<int64_t>(b) * c; ++pl) {
        const real s = tv[pl];
        const real* gp = g + pl * hw;
        real* dxp = dx + pl * hw;
        for (int64_t i = 0; i < hw; ++i) dxp[i] += gp[i] * s;
      }
    }
    if (wants_grad(self.parents[1])) {
      real* dt = self.parents[1]->ensure_grad().data();
      for (int64_t pl = 0; pl < static_cast<int64_t>(b) * c; ++pl) {
        const real* gp = g + pl * hw;
        const real* xp = xv.data() + pl * hw;
        real s = 0;
        for (int64_t i = 0; i < hw; ++i) s += gp[i] * xp[i];
        dt[pl] += s;
      }
    }
  });
}

namespace {
Var channel_affine(const Var& x, const Var& p, bool is_mul) {
  const auto& s = x->value.shape;
  assert(s.size() == 4 && p->value.numel() == s[1]);
  const int b = s[0], c = s[1];
  const int64_t hw = static_cast<int64_t>(s[2]) * s[3];
  Tensor y(x->value.shape);
#pragma omp parallel for schedule(static)
  for (int64_t pl = 0; pl < static_cast<int64_t>(b) * c; ++pl) {
    const real pv = p->value[pl % c];
    const real* xp = x->value.data() + pl * hw;
    real* yp = y.data() + pl * hw;
    if (is_mul)
      for (int64_t i = 0; i < hw; ++i) yp[i] = xp[i] * pv;
    else
      for (int64_t i = 0; i < hw; ++i) yp[i] = xp[i] + pv;
  }
  return make_op(std::move(y), {x, p}, [b, c, hw, is_mul](Node& self) {
    const real* g = self.grad.data();
    const auto& xv = self.parents[0]->value;
    const auto& pv = self.parents[1]->value;
    if (wants_grad(self.parents[0])) {
      real* dx = self.parents[0]->ensure_grad().data();
#pragma omp parallel for schedule(static)
      for (int64_t pl = 0; pl < static_cast<int64_t>(b) * c; ++pl) {
        const real scale = is_mul ? pv[pl % c] : real(1);
        const real* gp = g + pl * hw;
        real* dxp = dx + pl * hw;
        for (int64_t i = 0; i < hw; ++i) dxp[i] += gp[i] * scale;
      }
    }
    if (wants_grad(self.parents[1])) {
      real* dp = self.parents[1]->ensure_grad().data();
      // Channel sums accumulated in fixed order: channel-parallel, batch-serial.
#pragma omp parallel for schedule(static)
      for (int ci = 0; ci < c; ++ci) {
        real s = 0;
        for (int bi = 0; bi < b; ++bi) {
          const int64_t pl = static_cast<int64_t>(bi) * c + ci;
          const real* gp = g + pl * hw;
          if (is_mul) {
            const real* xp = xv.data() + pl * hw;
            for (int64_t i = 0; i < hw; ++i) s += gp[i] * xp[i];
          } else {
            for (int64_t i = 0; i < hw; ++i) s += gp[i];
          }
        }
        dp[ci] += s;
      }
    }
  });
}
}  // namespace

Var mul_channel(const Var& x, const Var& g) { return channel_affine(x, g, true); }
Var add_channel(const Var& x, const Var& b) { return channel_affine(x, b, false); }

}  // namespace slotgen::ag
