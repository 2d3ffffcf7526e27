#include "maskstream/cbs_decoder.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "maskstream/streaming_encoder.hpp"

namespace maskstream::cbs {

namespace {

// Log-probabilities for the next token of one hypothesis.
Tensor next_token_logprobs(nn::ParameterSet& params,
                           const nn::ModelConfig& config, const Tensor& memory,
                           const TokenSequence& tokens) {
  Tape tape;
  nn::Binding bind(tape, params);
  Tape::Id mem = tape.leaf(memory, false);
  Tape::Id logits = nn::decoder_forward(bind, config, tokens, mem, true);
  Tape::Id lp = tape.log_softmax_rows(logits);
  const Tensor& v = tape.val(lp);
  Tensor out(1, v.cols);
  std::copy(v.row(v.rows - 1), v.row(v.rows - 1) + v.cols, out.row(0));
  return out;
}

void sort_hyps(std::vector<BeamHypothesis>& hyps) {
  std::stable_sort(hyps.begin(), hyps.end(),
                   [](const BeamHypothesis& a, const BeamHypothesis& b) {
                     if (a.score != b.score) return a.score > b.score;
                     if (a.tokens.size() != b.tokens.size())
                       return a.tokens.size() < b.tokens.size();
                     return a.tokens < b.tokens;
                   });
}

}  // namespace

BbdResult bbd_step(std::vector<BeamHypothesis> hyps, const Tensor& memory,
                   nn::ParameterSet& params, const nn::ModelConfig& config,
                   const Vocabulary& vocab, int beam, int max_expansions,
                   int max_tokens) {
  if (beam < 1) throw std::invalid_argument("bbd_step: beam >= 1");
  if (hyps.empty()) throw std::invalid_argument("bbd_step: no hypotheses");

  BbdResult out;
  for (int round = 0; round < max_expansions; ++round) {
    if (int(hyps.front().tokens.size()) - 1 >= max_tokens) {
      out.reason = StopReason::Cap;
      break;
    }
    std::vector<BeamHypothesis> expanded;
    for (const auto& h : hyps) {
      Tensor lp = next_token_logprobs(params, config, memory, h.tokens);
      // Candidates: content tokens and eos.
      for (int k = 1; k <= vocab.size; ++k) {
        BeamHypothesis e = h;
        e.tokens.push_back(k);
        e.score += lp.at(0, k);
        expanded.push_back(std::move(e));
      }
      BeamHypothesis e = h;
      e.tokens.push_back(vocab.eos());
      e.score += lp.at(0, vocab.eos());
      expanded.push_back(std::move(e));
    }
    sort_hyps(expanded);
    if (int(expanded.size()) > beam) expanded.resize(std::size_t(beam));

    const BeamHypothesis& top = expanded.front();
    const int last = top.tokens.back();
    const int prev = top.tokens[top.tokens.size() - 2];
    if (last == vocab.eos()) {
      out.reason = StopReason::Eos;  // rollback: keep pre-expansion hyps
      break;
    }
    if (last == prev) {
      out.reason = StopReason::Repetition;
      break;
    }
    // Non-top eos candidates only exist for the stop check; a finished
    // hypothesis must not be extended further.
    expanded.erase(std::remove_if(expanded.begin(), expanded.end(),
                                  [&](const BeamHypothesis& h) {
                                    return h.tokens.back() == vocab.eos();
                                  }),
                   expanded.end());
    hyps = std::move(expanded);
    if (round + 1 == max_expansions) out.reason = StopReason::Cap;
  }
  out.hyps = std::move(hyps);
  out.boundary = int(out.hyps.front().tokens.size()) - 1;
  return out;
}

CbsResult cbs_beam_search(nn::ParameterSet& params,
                          const nn::ModelConfig& config,
                          const Vocabulary& vocab, const Tensor& features,
                          const streaming::BlockSpec& spec, int beam,
                          double maxlen_ratio) {
  Tape tape;  // forward-only encoder tape, shared across blocks
  nn::Binding bind(tape, params);
  auto blocks = streaming::block_encode_sequence(bind, config, features, spec);

  CbsResult out;
  std::vector<BeamHypothesis> hyps{{{vocab.sos()}, 0.0}};
  Tensor memory;  // grows block by block
  const int max_expansions = 2 * spec.n_center;
  for (const auto& blk : blocks) {
    const Tensor& h = tape.val(blk.central);
    if (memory.rows == 0) {
      memory = h;
    } else {
      Tensor grown(memory.rows + h.rows, memory.cols);
      std::copy(memory.v.begin(), memory.v.end(), grown.v.begin());
      std::copy(h.v.begin(), h.v.end(), grown.v.begin() + memory.size());
      memory = std::move(grown);
    }
    const int max_tokens =
        int(std::ceil(maxlen_ratio * double(memory.rows)));
    BbdResult step = bbd_step(std::move(hyps), memory, params, config, vocab,
                              beam, max_expansions, max_tokens);
    hyps = std::move(step.hyps);
    // Tokens confirmed by this block are fixed: drop hypotheses that
    // disagree with the top hypothesis's confirmed prefix.
    const TokenSequence& top = hyps.front().tokens;
    hyps.erase(std::remove_if(
                   hyps.begin() + 1, hyps.end(),
                   [&](const BeamHypothesis& h) {
                     for (int i = 0; i <= step.boundary; ++i)
                       if (i >= int(h.tokens.size()) ||
                           h.tokens[std::size_t(i)] != top[std::size_t(i)])
                         return true;
                     return false;
                   }),
               hyps.end());
    out.boundaries.push_back(step.boundary);
    if (step.reason == StopReason::Cap) ++out.cap_events;
    if (step.reason == StopReason::Eos) break;
  }
  // Remaining blocks (after a global eos stop) confirm nothing new.
  while (out.boundaries.size() < blocks.size())
    out.boundaries.push_back(out.boundaries.back());

  const BeamHypothesis& best = hyps.front();
  out.tokens.assign(best.tokens.begin() + 1, best.tokens.end());
  return out;
}

}  // namespace maskstream::cbs
