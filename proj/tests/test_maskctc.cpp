#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "maskstream/maskctc.hpp"
#include "maskstream/nn.hpp"
#include "maskstream/rng.hpp"
#include "maskstream/streaming.hpp"

using namespace maskstream;
using namespace maskstream::maskctc;

TEST_CASE("sample_mask: mask count uniform on 1..|y|, positions distinct") {
  Vocabulary vocab = data::build_vocab(12);
  TokenSequence y{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  Rng rng(55);
  std::vector<int> count_freq(y.size() + 1, 0);
  for (int draw = 0; draw < 10000; ++draw) {
    MaskedPair pair = sample_mask(y, vocab, rng);
    REQUIRE(!pair.mask_positions.empty());
    REQUIRE(pair.mask_positions.size() <= y.size());
    CHECK(std::is_sorted(pair.mask_positions.begin(),
                         pair.mask_positions.end()));
    CHECK(std::adjacent_find(pair.mask_positions.begin(),
                             pair.mask_positions.end()) ==
          pair.mask_positions.end());
    REQUIRE(pair.observed.size() == y.size());
    std::size_t mi = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (mi < pair.mask_positions.size() &&
          int(i) == pair.mask_positions[mi]) {
        CHECK(pair.observed[i] == vocab.mask());
        ++mi;
      } else {
        CHECK(pair.observed[i] == y[i]);
      }
    }
    ++count_freq[pair.mask_positions.size()];
  }
  for (std::size_t n = 1; n <= y.size(); ++n) {
    double freq = count_freq[n] / 10000.0;
    CHECK(freq > 0.08);
    CHECK(freq < 0.12);
  }
  CHECK_THROWS(sample_mask({}, vocab, rng));
}

TEST_CASE("cmlm_loss: gradient zero at unmasked rows, matches by hand") {
  Tape tape;
  Tensor logits{3, 5};
  Rng rng(7);
  for (auto& v : logits.v) v = rng.uniform(-1.0, 1.0);
  Tape::Id l = tape.leaf(logits);
  TokenSequence truth{1, 2, 3};
  MaskedPair pair;
  pair.observed = {1, 99, 3};  // slot 1 masked (value unused here)
  pair.mask_positions = {1};
  Tape::Id loss = cmlm_loss(tape, l, truth, pair);
  tape.backward(loss);
  const Tensor& g = tape.grad(l);
  for (int j = 0; j < 5; ++j) {
    CHECK(g.at(0, j) == 0.0);
    CHECK(g.at(2, j) == 0.0);
  }
  // Masked row: -log softmax(logits[1])[2].
  double z = 0.0;
  for (int j = 0; j < 5; ++j) z += std::exp(logits.at(1, j));
  double expect = -(logits.at(1, 2) - std::log(z));
  CHECK(tape.val(loss).at(0, 0) == doctest::Approx(expect));
}

TEST_CASE("maskctc_loss is the convex combination of its two terms") {
  Tape tape;
  Tensor a{1, 1}, b{1, 1};
  a.at(0, 0) = 2.0;
  b.at(0, 0) = 5.0;
  Tape::Id la = tape.leaf(a), lb = tape.leaf(b);
  Tape::Id joint = maskctc_loss(tape, la, lb, 0.3);
  CHECK(tape.val(joint).at(0, 0) == doctest::Approx(0.3 * 2.0 + 0.7 * 5.0));
  tape.backward(joint);
  CHECK(tape.grad(la).at(0, 0) == doctest::Approx(0.3));
  CHECK(tape.grad(lb).at(0, 0) == doctest::Approx(0.7));
}

TEST_CASE("maskfill_decode touches only mask slots") {
  nn::ModelConfig mc;
  mc.input_dim = 4;
  mc.d_model = 8;
  mc.heads = 2;
  mc.ff = 12;
  mc.enc_layers = 1;
  mc.dec_layers = 1;
  mc.vocab_total = 11;  // 6 content + specials
  mc.ctc_out = 7;
  Vocabulary vocab = data::build_vocab(6);
  Rng rng(3);
  nn::ParameterSet p;
  nn::init_encoder(p, mc, rng);
  nn::init_decoder(p, mc, rng);
  Tensor enc{5, mc.d_model};
  for (auto& v : enc.v) v = rng.uniform(-1.0, 1.0);
  TokenSequence init{2, vocab.mask(), 4, vocab.mask()};
  TokenSequence out = maskfill_decode(p, mc, vocab, enc, init);
  REQUIRE(out.size() == init.size());
  CHECK(out[0] == 2);
  CHECK(out[2] == 4);
  CHECK(vocab.is_content(out[1]));
  CHECK(vocab.is_content(out[3]));
  // No masks: identity.
  TokenSequence plain{1, 2, 3};
  CHECK(maskfill_decode(p, mc, vocab, enc, plain) == plain);
  // Deterministic.
  CHECK(maskfill_decode(p, mc, vocab, enc, init) == out);
}
