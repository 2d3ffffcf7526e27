#pragma once
// Row-major double matrix. All heavier products route through the
// kernels layer; everything else is straightforward loops.

#include <cassert>
#include <cstddef>
#include <vector>

#include "maskstream/kernels.hpp"
#include "maskstream/rng.hpp"

namespace maskstream {

struct Tensor {
  int rows = 0;
  int cols = 0;
  std::vector<double> v;

  Tensor() = default;
  Tensor(int r, int c) : rows(r), cols(c), v(std::size_t(r) * c, 0.0) {}

  std::size_t size() const { return v.size(); }
  double& at(int r, int c) { return v[std::size_t(r) * cols + c]; }
  double at(int r, int c) const { return v[std::size_t(r) * cols + c]; }
  double* row(int r) { return v.data() + std::size_t(r) * cols; }
  const double* row(int r) const { return v.data() + std::size_t(r) * cols; }

  bool same_shape(const Tensor& o) const {
    return rows == o.rows && cols == o.cols;
  }

  void fill(double x) {
    for (auto& e : v) e = x;
  }

  static Tensor zeros(int r, int c) { return Tensor(r, c); }

  static Tensor full(int r, int c, double x) {
    Tensor t(r, c);
    t.fill(x);
    return t;
  }

  static Tensor uniform(int r, int c, double lo, double hi, Rng& rng) {
    Tensor t(r, c);
    for (auto& e : t.v) e = rng.uniform(lo, hi);
    return t;
  }

  static Tensor normal(int r, int c, double sigma, Rng& rng) {
    Tensor t(r, c);
    for (auto& e : t.v) e = sigma * rng.normal();
    return t;
  }
};

// c = a op b with the kernel dispatch; shapes are asserted.
inline Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a = false,
                     bool trans_b = false) {
  const int m = trans_a ? a.cols : a.rows;
  const int k = trans_a ? a.rows : a.cols;
  const int kb = trans_b ? b.cols : b.rows;
  const int n = trans_b ? b.rows : b.cols;
  assert(k == kb);
  (void)kb;
  Tensor c(m, n);
  kernels::gemm(a.v.data(), b.v.data(), c.v.data(), m, k, n, trans_a, trans_b,
                false);
  return c;
}

inline void matmul_acc(Tensor& c, const Tensor& a, const Tensor& b,
                       bool trans_a = false, bool trans_b = false) {
  const int m = trans_a ? a.cols : a.rows;
  const int k = trans_a ? a.rows : a.cols;
  const int n = trans_b ? b.rows : b.cols;
  assert(c.rows == m && c.cols == n);
  kernels::gemm(a.v.data(), b.v.data(), c.v.data(), m, k, n, trans_a, trans_b,
                true);
}

inline void add_inplace(Tensor& y, const Tensor& x, double a = 1.0) {
  assert(y.same_shape(x));
  kernels::axpy(a, x.v.data(), y.v.data(), y.size());
}

}  // namespace maskstream
