#include "maskstream/maskctc.hpp"

#include <algorithm>
#include <stdexcept>

namespace maskstream::maskctc {

MaskedPair sample_mask(const TokenSequence& y, const Vocabulary& vocab,
                       Rng& rng) {
  if (y.empty()) throw std::invalid_argument("sample_mask: empty sequence");
  const int n = int(y.size());
  const int n_mask = int(rng.uniform_int(1, n));
  std::vector<int> positions(std::size_t(n), 0);
  for (int i = 0; i < n; ++i) positions[std::size_t(i)] = i;
  // Fisher-Yates prefix shuffle; the first n_mask entries are the draw.
  for (int i = 0; i < n_mask; ++i) {
    int j = int(rng.uniform_int(i, n - 1));
    std::swap(positions[std::size_t(i)], positions[std::size_t(j)]);
  }
  MaskedPair pair;
  pair.observed = y;
  pair.mask_positions.assign(positions.begin(), positions.begin() + n_mask);
  std::sort(pair.mask_positions.begin(), pair.mask_positions.end());
  for (int p : pair.mask_positions) pair.observed[std::size_t(p)] = vocab.mask();
  return pair;
}

Tape::Id cmlm_loss(Tape& tape, Tape::Id logits, const TokenSequence& truth,
                   const MaskedPair& pair) {
  if (pair.mask_positions.empty())
    throw std::invalid_argument("cmlm_loss: no masked positions");
  Tape::Id lp = tape.log_softmax_rows(logits);
  std::vector<std::pair<int, int>> picks;
  for (int p : pair.mask_positions) {
    if (p < 0 || p >= int(truth.size()))
      throw std::invalid_argument("cmlm_loss: mask position out of range");
    picks.emplace_back(p, truth[std::size_t(p)]);
  }
  return tape.picked_nll_mean(lp, picks);
}

Tape::Id maskctc_loss(Tape& tape, Tape::Id ctc_loss_node,
                      Tape::Id cmlm_loss_node, double alpha) {
  if (alpha < 0.0 || alpha > 1.0)
    throw std::invalid_argument("maskctc_loss: alpha must be in [0,1]");
  return tape.add(tape.scale(ctc_loss_node, alpha),
                  tape.scale(cmlm_loss_node, 1.0 - alpha));
}

TokenSequence maskfill_decode(nn::ParameterSet& params,
                              const nn::ModelConfig& config,
                              const Vocabulary& vocab, const Tensor& encoded,
                              const TokenSequence& y_init) {
  Tape tape;
  nn::Binding bind(tape, params);
  Tape::Id mem = tape.leaf(encoded, false);
  Tape::Id logits = nn::decoder_forward(bind, config, y_init, mem, false);
  const Tensor& lv = tape.val(logits);
  TokenSequence out = y_init;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out[i] != vocab.mask()) continue;
    // argmax over content tokens only
    int best = 1;
    for (int k = 2; k <= vocab.size; ++k)
      if (lv.at(int(i), k) > lv.at(int(i), best)) best = k;
    out[i] = best;
  }
  return out;
}

}  // namespace maskstream::maskctc
