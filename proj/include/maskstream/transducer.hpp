#pragma once
// Transducer head: RNN-T lattice loss with gradient, frame-synchronous
// greedy decoding with emission times, and beam search with prefix
// merging. Lattice rows are laid out t*(U+1)+u; column 0 is blank.

#include <vector>

#include "maskstream/data.hpp"
#include "maskstream/nn.hpp"
#include "maskstream/tensor.hpp"

namespace maskstream::transducer {

using data::TokenSequence;

struct EmissionRecord {
  int token_id = 0;
  int frame = 0;
};

struct LossResult {
  double loss = 0.0;
  Tensor grad;  // w.r.t. the T*(U+1) x V log-prob lattice
};

// -log of the mass of all monotone paths from (0,0) to (T,U); blank
// advances t, label y_{u+1} advances u, and every path ends with blank
// at t = T-1. U = 0 is the all-blank path.
LossResult rnnt_loss(const Tensor& lattice, int t_len,
                     const TokenSequence& target);

struct GreedyResult {
  TokenSequence tokens;
  std::vector<EmissionRecord> emissions;
  int cap_hits = 0;  // frames where the per-frame symbol cap fired
};

// encoded: T x d_model acoustic states. max_symbols caps non-blank
// emissions per frame to guarantee termination.
GreedyResult transducer_greedy(nn::ParameterSet& params,
                               const nn::ModelConfig& config,
                               const Tensor& encoded, int max_symbols = 5);

// Frame-synchronous beam search; hypotheses with identical prefixes are
// merged by log-sum-exp. beam=1 emits exactly the greedy tokens.
TokenSequence transducer_beam(nn::ParameterSet& params,
                              const nn::ModelConfig& config,
                              const Tensor& encoded, int beam = 10,
                              int max_symbols = 5);

}  // namespace maskstream::transducer
