#include "slotgen/core/kernels.hpp"

#include <cassert>
#include <cmath>
#include <cstring>
#include <vector>

namespace slotgen::kernels {

namespace {

inline void gemm_row_nn(const real* a, const real* b, real* c, int i, int n, int k,
                        real beta) {
  real* crow = c + static_cast<int64_t>(i) * n;
  if (beta == 0) {
    std::memset(crow, 0, sizeof(real) * static_cast<size_t>(n));
  } else if (beta != 1) {
    for (int j = 0; j < n; ++j) crow[j] *= beta;
  }
  const real* arow = a + static_cast<int64_t>(i) * k;
  for (int p = 0; p < k; ++p) {
    const real av = arow[p];
    const real* brow = b + static_cast<int64_t>(p) * n;
    for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
  }
}

inline void gemm_row_nt(const real* a, const real* b, real* c, int i, int n, int k,
                        real beta) {
  real* crow = c + static_cast<int64_t>(i) * n;
  const real* arow = a + static_cast<int64_t>(i) * k;
  for (int j = 0; j < n; ++j) {
    const real* brow = b + static_cast<int64_t>(j) * k;
    real s = 0;
    for (int p = 0; p < k; ++p) s += arow[p] * brow[p];
    crow[j] = (beta == 0 ? s : beta * crow[j] + s);
  }
}

// C = beta*C + A^T B with A stored [K, M]: rank-1 accumulation over k keeps
// every access contiguous and C cache-resident (M*N is small in practice).
// The k-ascending order matches the serial reference bitwise.
inline void gemm_tn(const real* a, const real* b, real* c, int m, int n, int k,
                    real beta) {
  if (beta == 0) {
    std::memset(c, 0, sizeof(real) * static_cast<size_t>(m) * n);
  } else if (beta != 1) {
    for (int64_t i = 0; i < static_cast<int64_t>(m) * n; ++i) c[i] *= beta;
  }
  for (int p = 0; p < k; ++p) {
    const real* arow = a + static_cast<int64_t>(p) * m;
    const real* brow = b + static_cast<int64_t>(p) * n;
    for (int i = 0; i < m; ++i) {
      const real av = arow[i];
      real* crow = c + static_cast<int64_t>(i) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

inline void gemm_dispatch_row(const real* a, const real* b, real* c, int i, int n,
                              int k, bool trans_b, real beta) {
  if (!trans_b) {
    gemm_row_nn(a, b, c, i, n, k, beta);
  } else {
    gemm_row_nt(a, b, c, i, n, k, beta);
  }
}

}  // namespace

void gemm(const real* a, const real* b, real* c, int m, int n, int k, bool trans_a,
          bool trans_b, real beta, bool parallel) {
  assert(!(trans_a && trans_b) && "gemm: trans_a && trans_b unsupported");
  if (trans_a) {
    // Accumulates into shared C, so it runs single-threaded; callers that
    // need parallel trans_a work split it along the batch dimension.
    gemm_tn(a, b, c, m, n, k, beta);
    return;
  }
  const int64_t work = static_cast<int64_t>(m) * n * k;
  if (parallel && m > 1 && work > (int64_t{1} << 14)) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) gemm_dispatch_row(a, b, c, i, n, k, trans_b, beta);
  } else {
    for (int i = 0; i < m; ++i) gemm_dispatch_row(a, b, c, i, n, k, trans_b, beta);
  }
}

void serial::gemm(const real* a, const real* b, real* c, int m, int n, int k,
                  bool trans_a, bool trans_b, real beta) {
  kernels::gemm(a, b, c, m, n, k, trans_a, trans_b, beta, /*parallel=*/false);
}

namespace {
inline int reflect_index(int i, int size) {
  // size >= 2 whenever pad > 0; single reflection suffices for pad < size.
  if (i < 0) return -i;
  if (i >= size) return 2 * size - 2 - i;
  return i;
}
}  // namespace

void im2col(const real* x, real* cols, int c, int h, int w, int kh, int kw,
            int stride, int pad, int pad_mode) {
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (w + 2 * pad - kw) / stride + 1;
  const int patch = oh * ow;
  int64_t row = 0;
  for (int ci = 0; ci < c; ++ci) {
    const real* xc = x + static_cast<int64_t>(ci) * h * w;
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx, ++row) {
        real* out = cols + row * patch;
        int64_t p = 0;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ky;
          const int ry = pad_mode == 1 ? reflect_index(iy, h) : iy;
          const bool y_ok = ry >= 0 && ry < h;
          for (int ox = 0; ox < ow; ++ox, ++p) {
            const int ix = ox * stride - pad + kx;
            const int rx = pad_mode == 1 ? reflect_index(ix, w) : ix;
            out[p] = (y_ok && rx >= 0 && rx < w) ? xc[ry * w + rx] : real(0);
          }
        }
      }
    }
  }
}

void col2im(const real* dcols, real* dx, int c, int h, int w, int kh, int kw,
            int stride, int pad, int pad_mode) {
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (w + 2 * pad - kw) / stride + 1;
  const int patch = oh * ow;
  // Rows of dcols for channel ci touch only channel ci of dx, so channels are
  // independent units of work.
#pragma omp parallel for schedule(static)
  for (int ci = 0; ci < c; ++ci) {
    real* xc = dx + static_cast<int64_t>(ci) * h * w;
    int64_t row = static_cast<int64_t>(ci) * kh * kw;
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx, ++row) {
        const real* src = dcols + row * patch;
        int64_t p = 0;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ky;
          const int ry = pad_mode == 1 ? reflect_index(iy, h) : iy;
          const bool y_ok = ry >= 0 && ry < h;
          for (int ox = 0; ox < ow; ++ox, ++p) {
            const int ix = ox * stride - pad + kx;
            const int rx = pad_mode == 1 ? reflect_index(ix, w) : ix;
            if (y_ok && rx >= 0 && rx < w) xc[ry * w + rx] += src[p];
          }
        }
      }
    }
  }
}

namespace {
inline void softmax_row(const real* x, real* y, int cols) {
  real mx = x[0];
  for (int j = 1; j < cols; ++j) mx = x[j] > mx ? x[j] : mx;
  real denom = 0;
  for (int j = 0; j < cols; ++j) {
    y[j] = std::exp(x[j] - mx);
    denom += y[j];
  }
  const real inv = real(1) / denom;
  for (int j = 0; j < cols; ++j) y[j] *= inv;
}
}  // namespace

void softmax_rows(const real* x, real* y, int64_t rows, int cols, bool parallel) {
  if (parallel && rows * cols > (int64_t{1} << 14)) {
#pragma omp parallel for schedule(static)
    for (int64_t r = 0; r < rows; ++r) softmax_row(x + r * cols, y + r * cols, cols);
  } else {
    for (int64_t r = 0; r < rows; ++r) softmax_row(x + r * cols, y + r * cols, cols);
  }
}

void serial::softmax_rows(const real* x, real* y, int64_t rows, int cols) {
  kernels::softmax_rows(x, y, rows, cols, /*parallel=*/false);
}

void softmax_rows_backward(const real* p, const real* dy, real* dx, int64_t rows,
                           int cols, bool parallel) {
  auto body = [&](int64_t r) {
    const real* pr = p + r * cols;
    const real* dr = dy + r * cols;
    real* xr = dx + r * cols;
    real dot = 0;
    for (int j = 0; j < cols; ++j) dot += dr[j] * pr[j];
    for (int j = 0; j < cols; ++j) xr[j] += pr[j] * (dr[j] - dot);
  };
  if (parallel && rows * cols > (int64_t{1} << 14)) {
#pragma omp parallel for schedule(static)
    for (int64_t r = 0; r < rows; ++r) body(r);
  } else {
    for (int64_t r = 0; r < rows; ++r) body(r);
  }
}

namespace {
inline void layernorm_row(const real* x, const real* gamma, const real* beta, real* y,
                          real* mean_out, real* rstd_out, int cols, real eps) {
  real mu = 0;
  for (int j = 0; j < cols; ++j) mu += x[j];
  mu /= cols;
  real var = 0;
  for (int j = 0; j < cols; ++j) {
    const real d = x[j] - mu;
    var += d * d;
  }
  var /= cols;
  const real rstd = real(1) / std::sqrt(var + eps);
  for (int j = 0; j < cols; ++j) {
    const real xn = (x[j] - mu) * rstd;
    y[j] = gamma ? xn * gamma[j] + (beta ? beta[j] : real(0)) : xn;
  }
  *mean_out = mu;
  *rstd_out = rstd;
}
}  // namespace

void layernorm_rows(const real* x, const real* gamma, const real* beta, real* y,
                    real* mean, real* rstd, int64_t rows, int cols, real eps,
                    bool parallel) {
  if (parallel && rows * cols > (int64_t{1} << 14)) {
#pragma omp parallel for schedule(static)
    for (int64_t r = 0; r < rows; ++r)
      layernorm_row(x + r * cols, gamma, beta, y + r * cols, mean + r, rstd + r, cols, eps);
  } else {
    for (int64_t r = 0; r < rows; ++r)
      layernorm_row(x + r * cols, gamma, beta, y + r * cols, mean + r, rstd + r, cols, eps);
  }
}

void serial::layernorm_rows(const real* x, const real* gamma, const real* beta,
                            real* y, real* mean, real* rstd, int64_t rows, int cols,
                            real eps) {
  kernels::layernorm_rows(x, gamma, beta, y, mean, rstd, rows, cols, eps,
                          /*parallel=*/false);
}

void layernorm_rows_backward(const real* x, const real* gamma, const real* dy,
                             const real* mean, const real* rstd, real* dx,
                             real* dgamma, real* dbeta, int64_t rows, int cols,
                             bool parallel) {
  // dgamma/dbeta accumulate across rows in index order (serial pass) so the
  // result is thread-count independent; the dx pass is per-row parallel.
  if (dgamma || dbeta) {
    for (int64_t r = 0; r < rows; ++r) {
      const real* xr = x + r * cols;
      const real* dr = dy + r * cols;
      const real mu = mean[r];
      const real rs = rstd[r];
      for (int j = 0; j < cols; ++j) {
        const real xn = (xr[j] - mu) * rs;
        if (dgamma) dgamma[j] += dr[j] * xn;
        if (dbeta) dbeta[j] += dr[j];
      }
    }
  }
  auto body = [&](int64_t r) {
    const real* xr = x + r * cols;
    const real* dr = dy + r * cols;
    real* out = dx + r * cols;
    const real mu = mean[r];
    const real rs = rstd[r];
    real g_mean = 0, gx_mean = 0;
    for (int j = 0; j < cols; ++j) {
      const real g = dr[j] * (gamma ? gamma[j] : real(1));
      const real xn = (xr[j] - mu) * rs;
      g_mean += g;
      gx_mean += g * xn;
    }
    g_mean /= cols;
    gx_mean /= cols;
    for (int j = 0; j < cols; ++j) {
      const real g = dr[j] * (gamma ? gamma[j] : real(1));
      const real xn = (xr[j] - mu) * rs;
      out[j] += rs * (g - g_mean - xn * gx_mean);
    }
  };
  if (parallel && rows * cols > (int64_t{1} << 14)) {
#pragma omp parallel for schedule(static)
    for (int64_t r = 0; r < rows; ++r) body(r);
  } else {
    for (int64_t r = 0; r < rows; ++r) body(r);
  }
}

real sum(const real* x, int64_t n) {
  constexpr int64_t kChunk = 1 << 14;
  const int64_t nchunks = (n + kChunk - 1) / kChunk;
  if (nchunks <= 1) {
    real s = 0;
    for (int64_t i = 0; i < n; ++i) s += x[i];
    return s;
  }
  std::vector<real> partial(static_cast<size_t>(nchunks), real(0));
#pragma omp parallel for schedule(static)
  for (int64_t c = 0; c < nchunks; ++c) {
    const int64_t lo = c * kChunk;
    const int64_t hi = lo + kChunk < n ? lo + kChunk : n;
    real s = 0;
    for (int64_t i = lo; i < hi; ++i) s += x[i];
    partial[static_cast<size_t>(c)] = s;
  }
  real s = 0;
  for (real p : partial) s += p;
  return s;
}

}  // namespace slotgen::kernels
