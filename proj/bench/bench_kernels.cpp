// Timings of the OpenMP kernels against their serial references, at the
// shapes the training loop actually hits.
#include "slotgen/core/kernels.hpp"
#include "slotgen/core/rng.hpp"

#include <chrono>
#include <cstdio>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

using namespace slotgen;

namespace {

double now_s() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

template <class F>
double time_best_of(int reps, F f) {
  double best = 1e100;
  for (int r = 0; r < reps; ++r) {
    const double t0 = now_s();
    f();
    best = std::min(best, now_s() - t0);
  }
  return best;
}

void bench_gemm(int m, int n, int k) {
  Rng rng(1);
  std::vector<real> a(static_cast<size_t>(m) * k), b(static_cast<size_t>(k) * n),
      c(static_cast<size_t>(m) * n);
  for (auto& x : a) x = rng.normal();
  for (auto& x : b) x = rng.normal();
  const double flops = 2.0 * m * n * k;
  const double ts = time_best_of(5, [&] {
    kernels::serial::gemm(a.data(), b.data(), c.data(), m, n, k, false, false, 0);
  });
  const double tp = time_best_of(5, [&] {
    kernels::gemm(a.data(), b.data(), c.data(), m, n, k, false, false, 0, true);
  });
  std::printf("gemm  %4dx%4dx%4d  serial %8.3f ms (%6.2f GF/s)  omp %8.3f ms (%6.2f GF/s)  speedup %.2fx\n",
              m, n, k, ts * 1e3, flops / ts * 1e-9, tp * 1e3, flops / tp * 1e-9, ts / tp);
}

void bench_conv(int bsz, int c, int h, int o) {
  Rng rng(2);
  std::vector<real> x(static_cast<size_t>(bsz) * c * h * h), w(static_cast<size_t>(o) * c * 9);
  for (auto& v : x) v = rng.normal();
  for (auto& v : w) v = rng.normal();
  const int oh = h;
  std::vector<real> cols(static_cast<size_t>(c) * 9 * oh * oh);
  std::vector<real> y(static_cast<size_t>(bsz) * o * oh * oh);
  const double flops = 2.0 * bsz * o * c * 9 * oh * oh;
  auto run = [&](bool parallel) {
    if (parallel) {
#pragma omp parallel for schedule(static) firstprivate(cols)
      for (int i = 0; i < bsz; ++i) {
        kernels::im2col(x.data() + static_cast<size_t>(i) * c * h * h, cols.data(), c,
                        h, h, 3, 3, 1, 1, 0);
        kernels::gemm(w.data(), cols.data(), y.data() + static_cast<size_t>(i) * o * oh * oh,
                      o, oh * oh, c * 9, false, false, 0, false);
      }
    } else {
      for (int i = 0; i < bsz; ++i) {
        kernels::im2col(x.data() + static_cast<size_t>(i) * c * h * h, cols.data(), c,
                        h, h, 3, 3, 1, 1, 0);
        kernels::gemm(w.data(), cols.data(), y.data() + static_cast<size_t>(i) * o * oh * oh,
                      o, oh * oh, c * 9, false, false, 0, false);
      }
    }
  };
  const double ts = time_best_of(5, [&] { run(false); });
  const double tp = time_best_of(5, [&] { run(true); });
  std::printf("conv3 B%-3d %3dc %2dx%-2d ->%3dc  serial %8.3f ms (%6.2f GF/s)  omp %8.3f ms (%6.2f GF/s)  speedup %.2fx\n",
              bsz, c, h, h, o, ts * 1e3, flops / ts * 1e-9, tp * 1e3, flops / tp * 1e-9, ts / tp);
}

void bench_softmax(int64_t rows, int cols) {
  Rng rng(3);
  std::vector<real> x(static_cast<size_t>(rows) * cols), y(x.size());
  for (auto& v : x) v = rng.normal();
  const double ts =
      time_best_of(5, [&] { kernels::serial::softmax_rows(x.data(), y.data(), rows, cols); });
  const double tp =
      time_best_of(5, [&] { kernels::softmax_rows(x.data(), y.data(), rows, cols, true); });
  std::printf("softmax %7lld x %-4d       serial %8.3f ms            omp %8.3f ms            speedup %.2fx\n",
              static_cast<long long>(rows), cols, ts * 1e3, tp * 1e3, ts / tp);
}

}  // namespace

int main() {
#ifdef _OPENMP
  std::printf("threads: %d\n", omp_get_max_threads());
#endif
  bench_gemm(64, 64, 576);
  bench_gemm(256, 96, 432);
  bench_gemm(512, 512, 512);
  bench_conv(32, 32, 8, 32);
  bench_conv(32, 64, 16, 64);
  bench_softmax(32 * 64, 14);
  bench_softmax(32 * 64, 64);
  return 0;
}
