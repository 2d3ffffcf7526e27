#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <vector>

#include "doctest.h"
#include "maskstream/nn.hpp"
#include "maskstream/rng.hpp"
#include "maskstream/tape.hpp"
#include "maskstream/transducer.hpp"

using namespace maskstream;
using namespace maskstream::transducer;

namespace {

Tensor random_lattice(int t_len, int u_len, int vocab, Rng& rng) {
  Tensor g{t_len * (u_len + 1), vocab};
  for (int r = 0; r < g.rows; ++r) {
    double z = 0.0;
    std::vector<double> e(std::size_t(vocab), 0.0);
    for (int v = 0; v < vocab; ++v) {
      e[std::size_t(v)] = std::exp(rng.uniform(-2.0, 2.0));
      z += e[std::size_t(v)];
    }
    for (int v = 0; v < vocab; ++v)
      g.at(r, v) = std::log(e[std::size_t(v)] / z);
  }
  return g;
}

// Sum over all monotone (t,u) paths by recursion: at (t,u) either emit
// blank (t+1) or the next label (u+1); accept at (T,U) reached by blank.
double brute_force(const Tensor& lattice, int t_len,
                   const data::TokenSequence& y, int t, int u, double logp) {
  const int u_len = int(y.size());
  if (t == t_len) return u == u_len ? std::exp(logp) : 0.0;
  const int row = t * (u_len + 1) + u;
  double total =
      brute_force(lattice, t_len, y, t + 1, u, logp + lattice.at(row, 0));
  if (u < u_len)
    total += brute_force(lattice, t_len, y, t, u + 1,
                         logp + lattice.at(row, y[std::size_t(u)]));
  return total;
}

}  // namespace

TEST_CASE("hand case: T=1, U=1, uniform lattice -> -ln(0.25)") {
  Tensor lattice{2, 2};
  for (auto& v : lattice.v) v = std::log(0.5);
  LossResult res = rnnt_loss(lattice, 1, {1});
  CHECK(res.loss == doctest::Approx(1.3862944).epsilon(1e-6));
}

TEST_CASE("empty target reduces to the all-blank path") {
  Rng rng(5);
  Tensor lattice = random_lattice(3, 0, 3, rng);
  double expect = 0.0;
  for (int t = 0; t < 3; ++t) expect += lattice.at(t, 0);
  CHECK(rnnt_loss(lattice, 3, {}).loss == doctest::Approx(-expect));
}

TEST_CASE("loss equals brute-force alignment enumeration (250 cases)") {
  Rng rng(909);
  for (int trial = 0; trial < 250; ++trial) {
    int t_len = 1 + int(rng.uniform_int(0, 3));
    int u_len = int(rng.uniform_int(0, 3));
    int vocab = 2 + int(rng.uniform_int(0, 2));
    data::TokenSequence y(std::size_t(u_len), 0);
    for (auto& t : y) t = int(rng.uniform_int(1, vocab - 1));
    Tensor lattice = random_lattice(t_len, u_len, vocab, rng);
    double oracle = -std::log(brute_force(lattice, t_len, y, 0, 0, 0.0));
    CHECK(rnnt_loss(lattice, t_len, y).loss ==
          doctest::Approx(oracle).epsilon(1e-9));
  }
}

TEST_CASE("lattice gradient matches central differences") {
  Rng rng(31);
  for (int trial = 0; trial < 8; ++trial) {
    int t_len = 2 + int(rng.uniform_int(0, 1));
    int u_len = 1 + int(rng.uniform_int(0, 1));
    data::TokenSequence y(std::size_t(u_len), 0);
    for (auto& t : y) t = 1 + int(rng.uniform_int(0, 1));
    Tensor lattice = random_lattice(t_len, u_len, 3, rng);
    LossResult res = rnnt_loss(lattice, t_len, y);
    auto f = [&](const std::vector<double>& at) {
      Tensor l2 = lattice;
      l2.v = at;
      return rnnt_loss(l2, t_len, y).loss;
    };
    CHECK(grad_check(f, lattice.v, res.grad.v, 1e-6) < 1e-5);
  }
}

TEST_CASE("beam=1 emits exactly the greedy tokens") {
  nn::ModelConfig mc;
  mc.d_model = 16;
  mc.heads = 2;
  mc.ff = 24;
  mc.enc_layers = 1;
  mc.joint_dim = 12;
  mc.vocab_total = 11;  // 6 content + 5 specials
  mc.ctc_out = 7;
  Rng rng(17);
  nn::ParameterSet p;
  nn::init_label_encoder(p, mc, rng);
  nn::init_joint(p, mc, rng);
  for (int trial = 0; trial < 12; ++trial) {
    Tensor enc{4 + int(rng.uniform_int(0, 6)), mc.d_model};
    for (auto& v : enc.v) v = rng.uniform(-1.5, 1.5);
    GreedyResult greedy = transducer_greedy(p, mc, enc, 5);
    CHECK(transducer_beam(p, mc, enc, 1, 5) == greedy.tokens);
    // Emission frames are nondecreasing and in range.
    CHECK(greedy.emissions.size() == greedy.tokens.size());
    int prev = 0;
    for (const auto& e : greedy.emissions) {
      CHECK(e.frame >= prev);
      CHECK(e.frame < enc.rows);
      prev = e.frame;
    }
    // Wider beams are deterministic run to run.
    CHECK(transducer_beam(p, mc, enc, 4, 5) ==
          transducer_beam(p, mc, enc, 4, 5));
  }
}

TEST_CASE("max_symbols caps per-frame emissions") {
  nn::ModelConfig mc;
  mc.d_model = 8;
  mc.heads = 2;
  mc.ff = 16;
  mc.joint_dim = 8;
  mc.vocab_total = 9;
  mc.ctc_out = 5;
  Rng rng(3);
  nn::ParameterSet p;
  nn::init_label_encoder(p, mc, rng);
  nn::init_joint(p, mc, rng);
  Tensor enc{3, mc.d_model};
  for (auto& v : enc.v) v = rng.uniform(-1.0, 1.0);
  GreedyResult r = transducer_greedy(p, mc, enc, 1);
  CHECK(int(r.tokens.size()) <= enc.rows * 1);
  GreedyResult r5 = transducer_greedy(p, mc, enc, 5);
  CHECK(int(r5.tokens.size()) <= enc.rows * 5);
}
