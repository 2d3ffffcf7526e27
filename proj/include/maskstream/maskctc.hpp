#pragma once
// Mask-CTC objective: random token masking, CMLM mask-prediction loss,
// joint weighting with CTC, and a one-pass mask-fill decoder.

#include <vector>

#include "maskstream/data.hpp"
#include "maskstream/nn.hpp"
#include "maskstream/rng.hpp"

namespace maskstream::maskctc {

using data::TokenSequence;
using data::Vocabulary;

struct MaskedPair {
  TokenSequence observed;           // ground truth with masked slots = mask id
  std::vector<int> mask_positions;  // sorted, at least one
};

// N_mask ~ Uniform{1..|y|}, positions uniform without replacement.
MaskedPair sample_mask(const TokenSequence& y, const Vocabulary& vocab,
                       Rng& rng);

// Mean over masked positions of -log softmax(logits)[true token].
// logits is a U x vocab_total node; returns a scalar node.
Tape::Id cmlm_loss(Tape& tape, Tape::Id logits, const TokenSequence& truth,
                   const MaskedPair& pair);

// alpha * ctc + (1 - alpha) * cmlm, both scalar nodes.
Tape::Id maskctc_loss(Tape& tape, Tape::Id ctc_loss_node,
                      Tape::Id cmlm_loss_node, double alpha);

// One pass: every mask slot replaced by the decoder argmax; other
// positions untouched.
TokenSequence maskfill_decode(nn::ParameterSet& params,
                              const nn::ModelConfig& config,
                              const Vocabulary& vocab, const Tensor& encoded,
                              const TokenSequence& y_init);

}  // namespace maskstream::maskctc
