#pragma once

#include "slotgen/core/tensor.hpp"

#include <cstdint>

// Data-parallel kernels. Every parallel kernel assigns each output element to
// exactly one thread and keeps a fixed accumulation order, so results are
// bit-identical to the serial reference for any OMP_NUM_THREADS. The serial
// versions are kept for tests and the kernel benchmark.
namespace slotgen::kernels {

// C[M,N] = beta*C + op(A)[M,K] * op(B)[K,N].
// trans_a: A stored [K,M]; trans_b: B stored [N,K]. trans_a && trans_b is unsupported.
void gemm(const real* a, const real* b, real* c, int m, int n, int k,
          bool trans_a, bool trans_b, real beta, bool parallel = true);

// Gathers conv patches: cols[C*kh*kw, oh*ow] from x[C,H,W].
// pad_mode 0 = zero, 1 = reflect (requires pad < H and pad < W).
void im2col(const real* x, real* cols, int c, int h, int w, int kh, int kw,
            int stride, int pad, int pad_mode);
// Scatter-add transpose of im2col: dx[C,H,W] += scatter(dcols).
void col2im(const real* dcols, real* dx, int c, int h, int w, int kh, int kw,
            int stride, int pad, int pad_mode);

// Row-wise softmax over the last dimension.
void softmax_rows(const real* x, real* y, int64_t rows, int cols, bool parallel = true);
// dx = p .* (dy - sum(dy .* p)) per row.
void softmax_rows_backward(const real* p, const real* dy, real* dx, int64_t rows,
                           int cols, bool parallel = true);

// Row-wise layer normalization: y = (x - mean) / sqrt(var + eps) * gamma + beta.
// gamma/beta may be null (treated as 1/0). mean/rstd outputs are kept for backward.
void layernorm_rows(const real* x, const real* gamma, const real* beta, real* y,
                    real* mean, real* rstd, int64_t rows, int cols, real eps,
                    bool parallel = true);
void layernorm_rows_backward(const real* x, const real* gamma, const real* dy,
                             const real* mean, const real* rstd, real* dx,
                             real* dgamma, real* dbeta, int64_t rows, int cols,
                             bool parallel = true);

namespace serial {
void gemm(const real* a, const real* b, real* c, int m, int n, int k,
          bool trans_a, bool trans_b, real beta);
void softmax_rows(const real* x, real* y, int64_t rows, int cols);
void layernorm_rows(const real* x, const real* gamma, const real* beta, real* y,
                    real* mean, real* rstd, int64_t rows, int cols, real eps);
}  // namespace serial

// Elementwise map, parallel over fixed-size chunks.
template <class F>
void map(const real* x, real* y, int64_t n, F f) {
  if (n >= (int64_t{1} << 15)) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) y[i] = f(x[i]);
  } else {
    for (int64_t i = 0; i < n; ++i) y[i] = f(x[i]);
  }
}

template <class F>
void map2(const real* a, const real* b, real* y, int64_t n, F f) {
  if (n >= (int64_t{1} << 15)) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) y[i] = f(a[i], b[i]);
  } else {
    for (int64_t i = 0; i < n; ++i) y[i] = f(a[i], b[i]);
  }
}

// Index-parallel loop with the same size threshold as map().
template <class F>
void par_for(int64_t n, F f) {
  if (n >= (int64_t{1} << 15)) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) f(i);
  } else {
    for (int64_t i = 0; i < n; ++i) f(i);
  }
}

// Deterministic sum: fixed-width chunk partials combined in index order, so the
// result does not depend on the thread count.
real sum(const real* x, int64_t n);

}  // namespace slotgen::kernels
