#pragma once
// Reverse-mode autodiff on a flat tape of tensor nodes. One tape per
// forward pass; creation order is the topological order, so backward is
// a single reverse sweep.

#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "maskstream/tensor.hpp"

namespace maskstream {

class Tape {
 public:
  using Id = int;

  // Leaves: parameters and inputs. needs_grad=false skips grad storage use.
  Id leaf(Tensor value, bool needs_grad = true);

  const Tensor& val(Id id) const { return nodes_[id].value; }
  const Tensor& grad(Id id) const { return nodes_[id].grad; }

  Id matmul(Id a, Id b, bool trans_a = false, bool trans_b = false);
  Id add(Id a, Id b);                      // same shape
  Id add_rowvec(Id a, Id bias);            // bias is 1 x cols
  Id add_const(Id a, const Tensor& c);     // e.g. positional encodings
  Id mul_const(Id a, const Tensor& m);     // e.g. dropout masks
  Id scale(Id a, double s);
  Id tanh_op(Id a);
  Id sigmoid_op(Id a);
  Id relu_op(Id a);
  Id hadamard(Id a, Id b);

  // Row softmax restricted to allowed positions (mask is rows*cols, row
  // major, nonzero = allowed). Disallowed outputs are exactly zero.
  // Throws std::invalid_argument on an all-disallowed row.
  Id softmax_rows_masked(Id a, const std::vector<std::uint8_t>& allow);
  Id softmax_rows(Id a);
  Id log_softmax_rows(Id a);

  Id layer_norm_rows(Id a, Id gain, Id bias, double eps = 1e-5);

  Id concat_rows(Id a, Id b);
  Id concat_cols(Id a, Id b);
  Id slice_rows(Id a, int r0, int r1);
  Id slice_cols(Id a, int c0, int c1);
  Id mean_rows_range(Id a, int r0, int r1);         // 1 x cols
  Id gather_rows(Id table, std::vector<int> idx);   // embedding lookup

  // Mean over picks of -x[r][c]; picks are (row, col). Scalar output.
  Id picked_nll_mean(Id logprobs, std::vector<std::pair<int, int>> picks);

  Id sum_all(Id a);  // scalar, for tests

  // Scalar node with a precomputed gradient w.r.t. one parent (CTC/RNN-T
  // losses compute their grid gradient during the forward DP).
  Id scalar_with_grad(double value, Id parent, Tensor grad_wrt_parent);

  // Backpropagate from a 1x1 node.
  void backward(Id root);

  int size() const { return int(nodes_.size()); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool needs_grad = true;
    std::function<void(Tape&, Id)> back;  // may be empty (leaf)
  };

  Id push(Tensor value, std::function<void(Tape&, Id)> back);
  Tensor& grad_mut(Id id) { return nodes_[id].grad; }

  std::vector<Node> nodes_;

  friend struct TapeDetail;
};

// Central-difference gradient check helper: f maps a flat parameter
// vector to a scalar. Returns the worst relative error across coords.
double grad_check(const std::function<double(const std::vector<double>&)>& f,
                  const std::vector<double>& at,
                  const std::vector<double>& analytic_grad, double step);

}  // namespace maskstream
