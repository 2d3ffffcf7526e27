#include "maskstream/tape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace maskstream {

struct TapeDetail {
  static void acc(Tape& t, Tape::Id id, const Tensor& g) {
    Tape::Node& n = t.nodes_[id];
    if (!n.needs_grad) return;
    add_inplace(n.grad, g);
  }
  static Tensor& g(Tape& t, Tape::Id id) { return t.nodes_[id].grad; }
  static const Tensor& v(Tape& t, Tape::Id id) { return t.nodes_[id].value; }
  static bool wants(Tape& t, Tape::Id id) { return t.nodes_[id].needs_grad; }
};

using D = TapeDetail;

Tape::Id Tape::push(Tensor value, std::function<void(Tape&, Id)> back) {
  Node n;
  n.value = std::move(value);
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Id(nodes_.size()) - 1;
}

Tape::Id Tape::leaf(Tensor value, bool needs_grad) {
  Id id = push(std::move(value), nullptr);
  nodes_[id].needs_grad = needs_grad;
  return id;
}

Tape::Id Tape::matmul(Id a, Id b, bool trans_a, bool trans_b) {
  Tensor out = maskstream::matmul(val(a), val(b), trans_a, trans_b);
  return push(std::move(out), [a, b, trans_a, trans_b](Tape& t, Id self) {
    const Tensor& go = D::g(t, self);
    // Four layout cases; TT never occurs in the models here.
    if (!trans_a && !trans_b) {
      if (D::wants(t, a)) matmul_acc(D::g(t, a), go, D::v(t, b), false, true);
      if (D::wants(t, b)) matmul_acc(D::g(t, b), D::v(t, a), go, true, false);
    } else if (!trans_a && trans_b) {
      if (D::wants(t, a)) matmul_acc(D::g(t, a), go, D::v(t, b), false, false);
      if (D::wants(t, b)) matmul_acc(D::g(t, b), go, D::v(t, a), true, false);
    } else {  // trans_a && !trans_b
      if (D::wants(t, a)) matmul_acc(D::g(t, a), D::v(t, b), go, false, true);
      if (D::wants(t, b)) matmul_acc(D::g(t, b), D::v(t, a), go, false, false);
    }
  });
}

Tape::Id Tape::add(Id a, Id b) {
  if (!val(a).same_shape(val(b))) throw std::invalid_argument("add: shape");
  Tensor out = val(a);
  add_inplace(out, val(b));
  return push(std::move(out), [a, b](Tape& t, Id self) {
    D::acc(t, a, D::g(t, self));
    D::acc(t, b, D::g(t, self));
  });
}

Tape::Id Tape::add_rowvec(Id a, Id bias) {
  const Tensor& x = val(a);
  const Tensor& bv = val(bias);
  if (bv.rows != 1 || bv.cols != x.cols)
    throw std::invalid_argument("add_rowvec: shape");
  Tensor out = x;
  for (int r = 0; r < x.rows; ++r)
    kernels::axpy(1.0, bv.row(0), out.row(r), std::size_t(x.cols));
  return push(std::move(out), [a, bias](Tape& t, Id self) {
    const Tensor& go = D::g(t, self);
    D::acc(t, a, go);
    if (D::wants(t, bias)) {
      Tensor& gb = D::g(t, bias);
      for (int r = 0; r < go.rows; ++r)
        kernels::axpy(1.0, go.row(r), gb.row(0), std::size_t(go.cols));
    }
  });
}

Tape::Id Tape::add_const(Id a, const Tensor& c) {
  if (!val(a).same_shape(c)) throw std::invalid_argument("add_const: shape");
  Tensor out = val(a);
  add_inplace(out, c);
  return push(std::move(out),
              [a](Tape& t, Id self) { D::acc(t, a, D::g(t, self)); });
}

Tape::Id Tape::mul_const(Id a, const Tensor& m) {
  if (!val(a).same_shape(m)) throw std::invalid_argument("mul_const: shape");
  Tensor out = val(a);
  for (std::size_t i = 0; i < out.size(); ++i) out.v[i] *= m.v[i];
  Tensor mcopy = m;
  return push(std::move(out), [a, mcopy](Tape& t, Id self) {
    if (!D::wants(t, a)) return;
    const Tensor& go = D::g(t, self);
    Tensor& ga = D::g(t, a);
    for (std::size_t i = 0; i < go.size(); ++i) ga.v[i] += go.v[i] * mcopy.v[i];
  });
}

Tape::Id Tape::scale(Id a, double s) {
  Tensor out = val(a);
  for (auto& e : out.v) e *= s;
  return push(std::move(out), [a, s](Tape& t, Id self) {
    if (!D::wants(t, a)) return;
    Tensor& ga = D::g(t, a);
    kernels::axpy(s, D::g(t, self).v.data(), ga.v.data(), ga.size());
  });
}

Tape::Id Tape::tanh_op(Id a) {
  Tensor out = val(a);
  for (auto& e : out.v) e = std::tanh(e);
  return push(std::move(out), [a](Tape& t, Id self) {
    if (!D::wants(t, a)) return;
    const Tensor& y = D::v(t, self);
    const Tensor& go = D::g(t, self);
    Tensor& ga = D::g(t, a);
    for (std::size_t i = 0; i < y.size(); ++i)
      ga.v[i] += go.v[i] * (1.0 - y.v[i] * y.v[i]);
  });
}

Tape::Id Tape::sigmoid_op(Id a) {
  Tensor out = val(a);
  for (auto& e : out.v) e = 1.0 / (1.0 + std::exp(-e));
  return push(std::move(out), [a](Tape& t, Id self) {
    if (!D::wants(t, a)) return;
    const Tensor& y = D::v(t, self);
    const Tensor& go = D::g(t, self);
    Tensor& ga = D::g(t, a);
    for (std::size_t i = 0; i < y.size(); ++i)
      ga.v[i] += go.v[i] * y.v[i] * (1.0 - y.v[i]);
  });
}

Tape::Id Tape::relu_op(Id a) {
  Tensor out = val(a);
  for (auto& e : out.v) e = e > 0.0 ? e : 0.0;
  return push(std::move(out), [a](Tape& t, Id self) {
    if (!D::wants(t, a)) return;
    const Tensor& y = D::v(t, self);
    const Tensor& go = D::g(t, self);
    Tensor& ga = D::g(t, a);
    for (std::size_t i = 0; i < y.size(); ++i)
      if (y.v[i] > 0.0) ga.v[i] += go.v[i];
  });
}

Tape::Id Tape::hadamard(Id a, Id b) {
  if (!val(a).same_shape(val(b)))
    throw std::invalid_argument("hadamard: shape");
  Tensor out = val(a);
  const Tensor& bv = val(b);
  for (std::size_t i = 0; i < out.size(); ++i) out.v[i] *= bv.v[i];
  return push(std::move(out), [a, b](Tape& t, Id self) {
    const Tensor& go = D::g(t, self);
    if (D::wants(t, a)) {
      Tensor& ga = D::g(t, a);
      const Tensor& vb = D::v(t, b);
      for (std::size_t i = 0; i < go.size(); ++i) ga.v[i] += go.v[i] * vb.v[i];
    }
    if (D::wants(t, b)) {
      Tensor& gb = D::g(t, b);
      const Tensor& va = D::v(t, a);
      for (std::size_t i = 0; i < go.size(); ++i) gb.v[i] += go.v[i] * va.v[i];
    }
  });
}

Tape::Id Tape::softmax_rows_masked(Id a,
                                   const std::vector<std::uint8_t>& allow) {
  const Tensor& x = val(a);
  if (allow.size() != x.size())
    throw std::invalid_argument("softmax mask size");
  Tensor out(x.rows, x.cols);
  for (int r = 0; r < x.rows; ++r) {
    const double* xr = x.row(r);
    const std::uint8_t* mr = allow.data() + std::size_t(r) * x.cols;
    double mx = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < x.cols; ++c)
      if (mr[c]) mx = std::max(mx, xr[c]);
    if (!std::isfinite(mx))
      throw std::invalid_argument("softmax_rows_masked: empty row");
    double z = 0.0;
    double* or_ = out.row(r);
    for (int c = 0; c < x.cols; ++c) {
      if (mr[c]) {
        or_[c] = std::exp(xr[c] - mx);
        z += or_[c];
      }
    }
    for (int c = 0; c < x.cols; ++c) or_[c] /= z;  // disallowed stay 0/z = 0
  }
  return push(std::move(out), [a](Tape& t, Id self) {
    if (!D::wants(t, a)) return;
    const Tensor& y = D::v(t, self);
    const Tensor& go = D::g(t, self);
    Tensor& ga = D::g(t, a);
    for (int r = 0; r < y.rows; ++r) {
      double dotgy = kernels::dot(go.row(r), y.row(r), std::size_t(y.cols));
      const double* yr = y.row(r);
      const double* gr = go.row(r);
      double* gar = ga.row(r);
      for (int c = 0; c < y.cols; ++c) gar[c] += yr[c] * (gr[c] - dotgy);
    }
  });
}

Tape::Id Tape::softmax_rows(Id a) {
  std::vector<std::uint8_t> allow(val(a).size(), 1);
  return softmax_rows_masked(a, allow);
}

Tape::Id Tape::log_softmax_rows(Id a) {
  const Tensor& x = val(a);
  Tensor out(x.rows, x.cols);
  for (int r = 0; r < x.rows; ++r) {
    const double* xr = x.row(r);
    double mx = *std::max_element(xr, xr + x.cols);
    double z = 0.0;
    for (int c = 0; c < x.cols; ++c) z += std::exp(xr[c] - mx);
    double lz = mx + std::log(z);
    for (int c = 0; c < x.cols; ++c) out.at(r, c) = xr[c] - lz;
  }
  return push(std::move(out), [a](Tape& t, Id self) {
    if (!D::wants(t, a)) return;
    const Tensor& y = D::v(t, self);
    const Tensor& go = D::g(t, self);
    Tensor& ga = D::g(t, a);
    for (int r = 0; r < y.rows; ++r) {
      double gsum = 0.0;
      for (int c = 0; c < y.cols; ++c) gsum += go.at(r, c);
      for (int c = 0; c < y.cols; ++c)
        ga.at(r, c) += go.at(r, c) - std::exp(y.at(r, c)) * gsum;
    }
  });
}

Tape::Id Tape::layer_norm_rows(Id a, Id gain, Id bias, double eps) {
  const Tensor& x = val(a);
  const Tensor& g = val(gain);
  const Tensor& b = val(bias);
  if (g.rows != 1 || g.cols != x.cols || b.rows != 1 || b.cols != x.cols)
    throw std::invalid_argument("layer_norm: shape");
  const int n = x.cols;
  Tensor out(x.rows, n);
  Tensor xhat(x.rows, n);
  std::vector<double> inv_sigma(std::size_t(x.rows));
  for (int r = 0; r < x.rows; ++r) {
    const double* xr = x.row(r);
    double mu = 0.0;
    for (int c = 0; c < n; ++c) mu += xr[c];
    mu /= n;
    double var = 0.0;
    for (int c = 0; c < n; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    var /= n;
    double is = 1.0 / std::sqrt(var + eps);
    inv_sigma[std::size_t(r)] = is;
    for (int c = 0; c < n; ++c) {
      double xh = (xr[c] - mu) * is;
      xhat.at(r, c) = xh;
      out.at(r, c) = g.at(0, c) * xh + b.at(0, c);
    }
  }
  Tensor xhat_c = xhat;
  auto isig = inv_sigma;
  return push(std::move(out),
              [a, gain, bias, xhat_c, isig](Tape& t, Id self) {
                const Tensor& go = D::g(t, self);
                const Tensor& g = D::v(t, gain);
                const int n = go.cols;
                for (int r = 0; r < go.rows; ++r) {
                  double sum_gdy = 0.0, sum_gdy_xh = 0.0;
                  for (int c = 0; c < n; ++c) {
                    double gdy = g.at(0, c) * go.at(r, c);
                    sum_gdy += gdy;
                    sum_gdy_xh += gdy * xhat_c.at(r, c);
                  }
                  if (D::wants(t, a)) {
                    Tensor& ga = D::g(t, a);
                    double is = isig[std::size_t(r)];
                    for (int c = 0; c < n; ++c) {
                      double gdy = g.at(0, c) * go.at(r, c);
                      ga.at(r, c) += is * (gdy - (sum_gdy +
                                                  xhat_c.at(r, c) * sum_gdy_xh) /
                                                     n);
                    }
                  }
                  if (D::wants(t, gain)) {
                    Tensor& gg = D::g(t, gain);
                    for (int c = 0; c < n; ++c)
                      gg.at(0, c) += go.at(r, c) * xhat_c.at(r, c);
                  }
                  if (D::wants(t, bias)) {
                    Tensor& gb = D::g(t, bias);
                    for (int c = 0; c < n; ++c) gb.at(0, c) += go.at(r, c);
                  }
                }
              });
}

Tape::Id Tape::concat_rows(Id a, Id b) {
  const Tensor& x = val(a);
  const Tensor& y = val(b);
  if (x.cols != y.cols) throw std::invalid_argument("concat_rows: cols");
  Tensor out(x.rows + y.rows, x.cols);
  std::copy(x.v.begin(), x.v.end(), out.v.begin());
  std::copy(y.v.begin(), y.v.end(), out.v.begin() + x.size());
  int ra = x.rows;
  return push(std::move(out), [a, b, ra](Tape& t, Id self) {
    const Tensor& go = D::g(t, self);
    if (D::wants(t, a)) {
      Tensor& ga = D::g(t, a);
      kernels::axpy(1.0, go.v.data(), ga.v.data(), ga.size());
    }
    if (D::wants(t, b)) {
      Tensor& gb = D::g(t, b);
      kernels::axpy(1.0, go.v.data() + std::size_t(ra) * go.cols,
                    gb.v.data(), gb.size());
    }
  });
}

Tape::Id Tape::concat_cols(Id a, Id b) {
  const Tensor& x = val(a);
  const Tensor& y = val(b);
  if (x.rows != y.rows) throw std::invalid_argument("concat_cols: rows");
  Tensor out(x.rows, x.cols + y.cols);
  for (int r = 0; r < x.rows; ++r) {
    std::copy(x.row(r), x.row(r) + x.cols, out.row(r));
    std::copy(y.row(r), y.row(r) + y.cols, out.row(r) + x.cols);
  }
  int ca = x.cols;
  return push(std::move(out), [a, b, ca](Tape& t, Id self) {
    const Tensor& go = D::g(t, self);
    if (D::wants(t, a)) {
      Tensor& ga = D::g(t, a);
      for (int r = 0; r < go.rows; ++r)
        kernels::axpy(1.0, go.row(r), ga.row(r), std::size_t(ca));
    }
    if (D::wants(t, b)) {
      Tensor& gb = D::g(t, b);
      for (int r = 0; r < go.rows; ++r)
        kernels::axpy(1.0, go.row(r) + ca, gb.row(r), std::size_t(gb.cols));
    }
  });
}

Tape::Id Tape::slice_rows(Id a, int r0, int r1) {
  const Tensor& x = val(a);
  if (r0 < 0 || r1 > x.rows || r0 >= r1)
    throw std::invalid_argument("slice_rows: range");
  Tensor out(r1 - r0, x.cols);
  std::copy(x.row(r0), x.row(r0) + out.size(), out.v.begin());
  return push(std::move(out), [a, r0](Tape& t, Id self) {
    if (!D::wants(t, a)) return;
    const Tensor& go = D::g(t, self);
    Tensor& ga = D::g(t, a);
    kernels::axpy(1.0, go.v.data(), ga.row(r0), go.size());
  });
}

Tape::Id Tape::slice_cols(Id a, int c0, int c1) {
  const Tensor& x = val(a);
  if (c0 < 0 || c1 > x.cols || c0 >= c1)
    throw std::invalid_argument("slice_cols: range");
  Tensor out(x.rows, c1 - c0);
  for (int r = 0; r < x.rows; ++r)
    std::copy(x.row(r) + c0, x.row(r) + c1, out.row(r));
  return push(std::move(out), [a, c0](Tape& t, Id self) {
    if (!D::wants(t, a)) return;
    const Tensor& go = D::g(t, self);
    Tensor& ga = D::g(t, a);
    for (int r = 0; r < go.rows; ++r)
      kernels::axpy(1.0, go.row(r), ga.row(r) + c0, std::size_t(go.cols));
  });
}

Tape::Id Tape::mean_rows_range(Id a, int r0, int r1) {
  const Tensor& x = val(a);
  if (r0 < 0 || r1 > x.rows || r0 >= r1)
    throw std::invalid_argument("mean_rows_range: range");
  Tensor out(1, x.cols);
  for (int r = r0; r < r1; ++r)
    kernels::axpy(1.0 / (r1 - r0), x.row(r), out.row(0), std::size_t(x.cols));
  return push(std::move(out), [a, r0, r1](Tape& t, Id self) {
    if (!D::wants(t, a)) return;
    const Tensor& go = D::g(t, self);
    Tensor& ga = D::g(t, a);
    for (int r = r0; r < r1; ++r)
      kernels::axpy(1.0 / (r1 - r0), go.row(0), ga.row(r),
                    std::size_t(go.cols));
  });
}

Tape::Id Tape::gather_rows(Id table, std::vector<int> idx) {
  const Tensor& tb = val(table);
  Tensor out(int(idx.size()), tb.cols);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= tb.rows)
      throw std::invalid_argument("gather_rows: index out of range");
    std::copy(tb.row(idx[i]), tb.row(idx[i]) + tb.cols, out.row(int(i)));
  }
  return push(std::move(out), [table, idx](Tape& t, Id self) {
    if (!D::wants(t, table)) return;
    const Tensor& go = D::g(t, self);
    Tensor& gt = D::g(t, table);
    for (std::size_t i = 0; i < idx.size(); ++i)
      kernels::axpy(1.0, go.row(int(i)), gt.row(idx[i]), std::size_t(go.cols));
  });
}

Tape::Id Tape::picked_nll_mean(Id logprobs,
                               std::vector<std::pair<int, int>> picks) {
  if (picks.empty()) throw std::invalid_argument("picked_nll_mean: no picks");
  const Tensor& lp = val(logprobs);
  double s = 0.0;
  for (auto [r, c] : picks) {
    if (r < 0 || r >= lp.rows || c < 0 || c >= lp.cols)
      throw std::invalid_argument("picked_nll_mean: pick out of range");
    s -= lp.at(r, c);
  }
  Tensor out(1, 1);
  out.at(0, 0) = s / double(picks.size());
  return push(std::move(out), [logprobs, picks](Tape& t, Id self) {
    if (!D::wants(t, logprobs)) return;
    double g = D::g(t, self).at(0, 0) / double(picks.size());
    Tensor& gl = D::g(t, logprobs);
    for (auto [r, c] : picks) gl.at(r, c) -= g;
  });
}

Tape::Id Tape::sum_all(Id a) {
  const Tensor& x = val(a);
  Tensor out(1, 1);
  for (auto e : x.v) out.at(0, 0) += e;
  return push(std::move(out), [a](Tape& t, Id self) {
    if (!D::wants(t, a)) return;
    double g = D::g(t, self).at(0, 0);
    Tensor& ga = D::g(t, a);
    for (auto& e : ga.v) e += g;
  });
}

Tape::Id Tape::scalar_with_grad(double value, Id parent,
                                Tensor grad_wrt_parent) {
  if (!grad_wrt_parent.same_shape(val(parent)))
    throw std::invalid_argument("scalar_with_grad: grad shape");
  Tensor out(1, 1);
  out.at(0, 0) = value;
  return push(std::move(out),
              [parent, grad_wrt_parent](Tape& t, Id self) {
                if (!D::wants(t, parent)) return;
                double g = D::g(t, self).at(0, 0);
                Tensor& gp = D::g(t, parent);
                kernels::axpy(g, grad_wrt_parent.v.data(), gp.v.data(),
                              gp.size());
              });
}

void Tape::backward(Id root) {
  if (val(root).rows != 1 || val(root).cols != 1)
    throw std::invalid_argument("backward: root must be scalar");
  for (Id i = 0; i <= root; ++i)
    nodes_[i].grad = Tensor(nodes_[i].value.rows, nodes_[i].value.cols);
  nodes_[root].grad.at(0, 0) = 1.0;
  for (Id i = root; i >= 0; --i)
    if (nodes_[i].back) nodes_[i].back(*this, i);
}

double grad_check(const std::function<double(const std::vector<double>&)>& f,
                  const std::vector<double>& at,
                  const std::vector<double>& analytic_grad, double step) {
  if (step <= 0.0) throw std::invalid_argument("grad_check: step must be > 0");
  if (at.size() != analytic_grad.size())
    throw std::invalid_argument("grad_check: size mismatch");
  double worst = 0.0;
  std::vector<double> x = at;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double keep = x[i];
    x[i] = keep + step;
    double fp = f(x);
    x[i] = keep - step;
    double fm = f(x);
    x[i] = keep;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw std::runtime_error("grad_check: non-finite objective");
    double num = (fp - fm) / (2.0 * step);
    double denom = std::max({std::abs(num), std::abs(analytic_grad[i]), 1e-8});
    worst = std::max(worst, std::abs(num - analytic_grad[i]) / denom);
  }
  return worst;
}

}  // namespace maskstream
