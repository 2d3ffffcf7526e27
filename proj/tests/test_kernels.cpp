#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <vector>

#include "doctest.h"
#include "maskstream/kernels.hpp"
#include "maskstream/rng.hpp"

using namespace maskstream;
using kernels::Isa;

namespace {

std::vector<double> random_vec(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-2.0, 2.0);
  return v;
}

void gemm_naive(const std::vector<double>& a, const std::vector<double>& b,
                std::vector<double>& c, int m, int k, int n, bool ta, bool tb,
                bool acc) {
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double s = acc ? c[std::size_t(i) * n + j] : 0.0;
      for (int p = 0; p < k; ++p) {
        double av = ta ? a[std::size_t(p) * m + i] : a[std::size_t(i) * k + p];
        double bv = tb ? b[std::size_t(j) * k + p] : b[std::size_t(p) * n + j];
        s += av * bv;
      }
      c[std::size_t(i) * n + j] = s;
    }
}

}  // namespace

TEST_CASE("axpy and dot match naive loops on both ISAs") {
  Rng rng(7);
  for (Isa isa : {Isa::Scalar, Isa::Avx2}) {
    if (isa == Isa::Avx2 && kernels::active_isa() == Isa::Scalar) continue;
    kernels::force_isa(isa);
    for (std::size_t n : {1u, 3u, 4u, 8u, 17u, 64u, 133u}) {
      auto x = random_vec(n, rng), y = random_vec(n, rng);
      auto y2 = y;
      double a = rng.uniform(-1.0, 1.0);
      kernels::axpy(a, x.data(), y2.data(), n);
      double expect_dot = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        CHECK(y2[i] == doctest::Approx(y[i] + a * x[i]).epsilon(1e-12));
        expect_dot += x[i] * y[i];
      }
      CHECK(kernels::dot(x.data(), y.data(), n) ==
            doctest::Approx(expect_dot).epsilon(1e-10));
    }
  }
  kernels::reset_isa();
}

TEST_CASE("gemm matches naive triple loop for all transpose modes") {
  Rng rng(19);
  for (Isa isa : {Isa::Scalar, Isa::Avx2}) {
    if (isa == Isa::Avx2 && kernels::active_isa() == Isa::Scalar) continue;
    kernels::force_isa(isa);
    for (int trial = 0; trial < 30; ++trial) {
      int m = 1 + int(rng.uniform_int(0, 9));
      int k = 1 + int(rng.uniform_int(0, 9));
      int n = 1 + int(rng.uniform_int(0, 9));
      for (int mode = 0; mode < 3; ++mode) {
        bool ta = mode == 2, tb = mode == 1;
        bool acc = trial % 2 == 0;
        auto a = random_vec(std::size_t(m) * k, rng);
        auto b = random_vec(std::size_t(k) * n, rng);
        auto c = random_vec(std::size_t(m) * n, rng);
        auto expect = c;
        gemm_naive(a, b, expect, m, k, n, ta, tb, acc);
        kernels::gemm(a.data(), b.data(), c.data(), m, k, n, ta, tb, acc);
        for (std::size_t i = 0; i < c.size(); ++i)
          CHECK(c[i] == doctest::Approx(expect[i]).epsilon(1e-10));
      }
    }
  }
  kernels::reset_isa();
}

TEST_CASE("scalar and AVX2 paths agree bit-for-bit on dot block order") {
  if (kernels::active_isa() == Isa::Scalar) return;  // no AVX2 on this host
  Rng rng(23);
  auto x = random_vec(257, rng), y = random_vec(257, rng);
  kernels::force_isa(Isa::Scalar);
  double scalar = kernels::dot(x.data(), y.data(), x.size());
  kernels::force_isa(Isa::Avx2);
  double avx = kernels::dot(x.data(), y.data(), x.size());
  kernels::reset_isa();
  CHECK(scalar == doctest::Approx(avx).epsilon(1e-12));
}

TEST_CASE("gemm rejects double transpose") {
  double a[1] = {1.0}, b[1] = {1.0}, c[1] = {0.0};
  CHECK_THROWS(kernels::gemm(a, b, c, 1, 1, 1, true, true, false));
}
