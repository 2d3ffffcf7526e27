#pragma once
// Block-synchronous attention-decoder beam search with block boundary
// detection: expansion stops within a block on end-of-sentence or
// immediate token repetition on the top hypothesis, with the triggering
// expansion rolled back.

#include <vector>

#include "maskstream/data.hpp"
#include "maskstream/nn.hpp"
#include "maskstream/streaming.hpp"

namespace maskstream::cbs {

using data::TokenSequence;
using data::Vocabulary;

struct BeamHypothesis {
  TokenSequence tokens;  // tokens[0] is sos
  double score = 0.0;    // cumulative log-probability
};

enum class StopReason { BlockExhausted, Eos, Repetition, Cap };

struct BbdResult {
  std::vector<BeamHypothesis> hyps;
  int boundary = 0;  // confirmed token count (sos excluded)
  StopReason reason = StopReason::BlockExhausted;
};

// Expand hypotheses against memory H_{1:b} until a stopping criterion
// fires, max_expansions rounds have run, or the top hypothesis holds
// max_tokens tokens (sos excluded; pass INT_MAX for no length guard).
BbdResult bbd_step(std::vector<BeamHypothesis> hyps, const Tensor& memory,
                   nn::ParameterSet& params, const nn::ModelConfig& config,
                   const Vocabulary& vocab, int beam, int max_expansions,
                   int max_tokens);

struct CbsResult {
  TokenSequence tokens;         // best hypothesis, sos/eos stripped
  std::vector<int> boundaries;  // I_b per block
  int cap_events = 0;
};

// maxlen_ratio caps the hypothesis length at ceil(ratio * frames encoded
// so far); it only binds when neither BBD criterion fires and keeps an
// uncertain decoder from hallucinating past the audio it has seen.
CbsResult cbs_beam_search(nn::ParameterSet& params,
                          const nn::ModelConfig& config,
                          const Vocabulary& vocab, const Tensor& features,
                          const streaming::BlockSpec& spec, int beam = 10,
                          double maxlen_ratio = 0.4);

}  // namespace maskstream::cbs
