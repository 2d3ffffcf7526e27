#pragma once
// CTC: log-space forward loss with grid gradient, greedy decoding,
// Viterbi forced alignment and spike extraction. Grids are T x V
// log-posteriors with column 0 = blank.

#include <stdexcept>
#include <vector>

#include "maskstream/data.hpp"
#include "maskstream/tensor.hpp"

namespace maskstream::ctc {

using data::Alignment;
using data::TokenSequence;

// Log-domain zero. A large negative sentinel rather than -inf so that
// arithmetic never produces NaNs; anything at or below half this value
// is treated as impossible.
constexpr double kLogZero = -1e30;

double log_sum_exp(double a, double b);

class InfeasibleTargetError : public std::runtime_error {
 public:
  explicit InfeasibleTargetError(const std::string& what)
      : std::runtime_error(what) {}
};

// Minimum frame count for a target: |y| plus one separating blank per
// adjacent repeat.
int min_frames(const TokenSequence& target);

struct LossResult {
  double loss = 0.0;
  Tensor grad;  // d loss / d logprob, same shape as the grid
};

// -log of the total path mass collapsing to target. Throws
// InfeasibleTargetError when T < min_frames(target).
LossResult ctc_loss(const Tensor& logprobs, const TokenSequence& target);

// Per-frame argmax (ties to the lowest id), collapse repeats, drop blanks.
TokenSequence ctc_greedy(const Tensor& logprobs);

// Max-probability path via Viterbi; token span = contiguous emission
// frames, spike = argmax of the token's posterior within the span
// (ties to the earliest frame).
Alignment ctc_viterbi_align(const Tensor& logprobs,
                            const TokenSequence& target);

// Spike frames of the best path's collapsed runs; `decoded` must come
// from ctc_greedy on the same grid.
std::vector<int> ctc_spikes(const Tensor& logprobs,
                            const TokenSequence& decoded);

}  // namespace maskstream::ctc
