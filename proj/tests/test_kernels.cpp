#include "doctest.h"

#include "slotgen/core/kernels.hpp"
#include "slotgen/core/rng.hpp"

#include <vector>

using namespace slotgen;

namespace {

std::vector<real> random_vec(size_t n, Rng& rng) {
  std::vector<real> v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

void naive_gemm(const real* a, const real* b, real* c, int m, int n, int k,
                bool ta, bool tb) {
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      real s = 0;
      for (int p = 0; p < k; ++p) {
        const real av = ta ? a[p * m + i] : a[i * k + p];
        const real bv = tb ? b[j * k + p] : b[p * n + j];
        s += av * bv;
      }
      c[i * n + j] = s;
    }
}

}  // namespace

TEST_CASE("gemm matches naive for all supported transpose modes") {
  Rng rng(1);
  const int dims[3][3] = {{7, 5, 9}, {33, 64, 48}, {1, 17, 3}};
  const bool modes[3][2] = {{false, false}, {false, true}, {true, false}};
  for (const auto& d : dims) {
    const int m = d[0], n = d[1], k = d[2];
    for (const auto& mode : modes) {
      const bool ta = mode[0], tb = mode[1];
      auto a = random_vec(static_cast<size_t>(m) * k, rng);
      auto b = random_vec(static_cast<size_t>(n) * k, rng);
      std::vector<real> c(static_cast<size_t>(m) * n, 0), ref(c);
      kernels::gemm(a.data(), b.data(), c.data(), m, n, k, ta, tb, 0);
      naive_gemm(a.data(), b.data(), ref.data(), m, n, k, ta, tb);
      for (size_t i = 0; i < c.size(); ++i) CHECK(c[i] == doctest::Approx(ref[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("gemm beta accumulates") {
  Rng rng(2);
  const int m = 6, n = 4, k = 5;
  auto a = random_vec(m * k, rng);
  auto b = random_vec(k * n, rng);
  auto c0 = random_vec(m * n, rng);
  auto c = c0;
  kernels::gemm(a.data(), b.data(), c.data(), m, n, k, false, false, 1);
  std::vector<real> prod(m * n, 0);
  naive_gemm(a.data(), b.data(), prod.data(), m, n, k, false, false);
  for (int i = 0; i < m * n; ++i) CHECK(c[i] == doctest::Approx(c0[i] + prod[i]));
}

TEST_CASE("parallel kernels are bit-identical to serial references") {
  Rng rng(3);
  const int m = 257, n = 96, k = 133;
  auto a = random_vec(static_cast<size_t>(m) * k, rng);
  auto b = random_vec(static_cast<size_t>(k) * n, rng);
  std::vector<real> c1(static_cast<size_t>(m) * n), c2(c1);
  kernels::gemm(a.data(), b.data(), c1.data(), m, n, k, false, false, 0, true);
  kernels::serial::gemm(a.data(), b.data(), c2.data(), m, n, k, false, false, 0);
  CHECK(c1 == c2);

  const int64_t rows = 1024;
  const int cols = 37;
  auto x = random_vec(static_cast<size_t>(rows) * cols, rng);
  std::vector<real> y1(x.size()), y2(x.size());
  kernels::softmax_rows(x.data(), y1.data(), rows, cols, true);
  kernels::serial::softmax_rows(x.data(), y2.data(), rows, cols);
  CHECK(y1 == y2);

  std::vector<real> g = random_vec(static_cast<size_t>(cols), rng);
  std::vector<real> be = random_vec(static_cast<size_t>(cols), rng);
  std::vector<real> ln1(x.size()), ln2(x.size()), mu1(rows), mu2(rows), rs1(rows), rs2(rows);
  kernels::layernorm_rows(x.data(), g.data(), be.data(), ln1.data(), mu1.data(),
                          rs1.data(), rows, cols, 1e-6, true);
  kernels::serial::layernorm_rows(x.data(), g.data(), be.data(), ln2.data(), mu2.data(),
                                  rs2.data(), rows, cols, 1e-6);
  CHECK(ln1 == ln2);
}

TEST_CASE("softmax rows sum to one") {
  Rng rng(4);
  const int64_t rows = 64;
  const int cols = 11;
  auto x = random_vec(static_cast<size_t>(rows) * cols, rng);
  std::vector<real> y(x.size());
  kernels::softmax_rows(x.data(), y.data(), rows, cols);
  for (int64_t r = 0; r < rows; ++r) {
    real s = 0;
    for (int c = 0; c < cols; ++c) s += y[r * cols + c];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("im2col/col2im round trip adds multiplicities") {
  // Every input pixel receives exactly the number of patches it appears in.
  const int c = 2, h = 5, w = 4, kh = 3, kw = 3, stride = 1, pad = 1;
  const int oh = h, ow = w;
  std::vector<real> x(static_cast<size_t>(c) * h * w);
  Rng rng(5);
  for (auto& v : x) v = rng.normal();
  std::vector<real> cols(static_cast<size_t>(c) * kh * kw * oh * ow);
  kernels::im2col(x.data(), cols.data(), c, h, w, kh, kw, stride, pad, 0);
  std::vector<real> ones(cols.size(), 1.0);
  std::vector<real> counts(x.size(), 0.0);
  kernels::col2im(ones.data(), counts.data(), c, h, w, kh, kw, stride, pad, 0);
  // Interior pixels of a 3x3/stride-1 conv appear in 9 patches.
  CHECK(counts[1 * w + 1 + 0] == doctest::Approx(9));
  CHECK(counts[0] == doctest::Approx(4));  // corner
}

TEST_CASE("im2col reflect padding never reads zeros") {
  const int c = 1, h = 4, w = 4, kh = 3, kw = 3;
  std::vector<real> x(16, 7.5);
  std::vector<real> cols(static_cast<size_t>(kh) * kw * 16);
  kernels::im2col(x.data(), cols.data(), c, h, w, kh, kw, 1, 1, 1);
  for (real v : cols) CHECK(v == 7.5);
}

TEST_CASE("deterministic sum matches serial") {
  Rng rng(6);
  auto x = random_vec(100000, rng);
  real serial = 0;
  for (real v : x) serial += v;
  // Chunked reduction differs from plain accumulation only by chunk order.
  CHECK(kernels::sum(x.data(), static_cast<int64_t>(x.size())) ==
        doctest::Approx(serial).epsilon(1e-12));
}
