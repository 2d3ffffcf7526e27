#include "maskstream/transducer.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "maskstream/ctc.hpp"

namespace maskstream::transducer {

using ctc::kLogZero;
using ctc::log_sum_exp;

LossResult rnnt_loss(const Tensor& lattice, int t_len,
                     const TokenSequence& target) {
  const int u_len = int(target.size());
  if (t_len < 1) throw std::invalid_argument("rnnt_loss: T must be >= 1");
  if (lattice.rows != t_len * (u_len + 1))
    throw std::invalid_argument("rnnt_loss: lattice rows != T*(U+1)");
  for (int y : target)
    if (y < 1 || y >= lattice.cols)
      throw std::invalid_argument("rnnt_loss: target id out of range");

  auto lp = [&](int t, int u, int k) {
    return lattice.at(t * (u_len + 1) + u, k);
  };

  Tensor alpha = Tensor::full(t_len, u_len + 1, kLogZero);
  alpha.at(0, 0) = 0.0;
  for (int t = 0; t < t_len; ++t) {
    for (int u = 0; u <= u_len; ++u) {
      double a = (t == 0 && u == 0) ? 0.0 : kLogZero;
      if (t > 0 && alpha.at(t - 1, u) > kLogZero / 2)
        a = log_sum_exp(a, alpha.at(t - 1, u) + lp(t - 1, u, 0));
      if (u > 0 && alpha.at(t, u - 1) > kLogZero / 2)
        a = log_sum_exp(a, alpha.at(t, u - 1) + lp(t, u - 1, target[u - 1]));
      alpha.at(t, u) = a;
    }
  }
  const double log_z = alpha.at(t_len - 1, u_len) + lp(t_len - 1, u_len, 0);

  Tensor beta = Tensor::full(t_len, u_len + 1, kLogZero);
  beta.at(t_len - 1, u_len) = lp(t_len - 1, u_len, 0);
  for (int t = t_len - 1; t >= 0; --t) {
    for (int u = u_len; u >= 0; --u) {
      if (t == t_len - 1 && u == u_len) continue;
      double b = kLogZero;
      if (t + 1 < t_len && beta.at(t + 1, u) > kLogZero / 2)
        b = log_sum_exp(b, lp(t, u, 0) + beta.at(t + 1, u));
      if (u < u_len && beta.at(t, u + 1) > kLogZero / 2)
        b = log_sum_exp(b, lp(t, u, target[u]) + beta.at(t, u + 1));
      beta.at(t, u) = b;
    }
  }

  LossResult out;
  out.loss = -log_z;
  out.grad = Tensor(lattice.rows, lattice.cols);
  for (int t = 0; t < t_len; ++t) {
    for (int u = 0; u <= u_len; ++u) {
      if (alpha.at(t, u) <= kLogZero / 2) continue;
      // blank transition
      double down = (t + 1 < t_len) ? beta.at(t + 1, u)
                                    : (u == u_len ? 0.0 : kLogZero);
      if (down > kLogZero / 2) {
        double g = alpha.at(t, u) + lp(t, u, 0) + down - log_z;
        out.grad.at(t * (u_len + 1) + u, 0) -= std::exp(g);
      }
      // label transition
      if (u < u_len && beta.at(t, u + 1) > kLogZero / 2) {
        double g =
            alpha.at(t, u) + lp(t, u, target[u]) + beta.at(t, u + 1) - log_z;
        out.grad.at(t * (u_len + 1) + u, target[u]) -= std::exp(g);
      }
    }
  }
  return out;
}

namespace {

struct PrefixState {
  nn::LstmState lstm;
};

// Label-encoder states are a pure function of the prefix; memoized so
// merged hypotheses share one state.
class StateCache {
 public:
  StateCache(nn::ParameterSet& p, const nn::ModelConfig& c, int sos)
      : params_(p), config_(c) {
    nn::LstmState init = nn::lstm_initial_state(c);
    cache_[{}] = nn::lstm_decode_step(params_, config_, sos, init);
  }

  const nn::LstmState& get(const TokenSequence& prefix) {
    auto it = cache_.find(prefix);
    if (it != cache_.end()) return it->second;
    TokenSequence parent(prefix.begin(), prefix.end() - 1);
    const nn::LstmState& ps = get(parent);
    auto [it2, ok] = cache_.emplace(
        prefix, nn::lstm_decode_step(params_, config_, prefix.back(), ps));
    return it2->second;
  }

 private:
  nn::ParameterSet& params_;
  const nn::ModelConfig& config_;
  std::map<TokenSequence, nn::LstmState> cache_;
};

Tensor enc_row(const Tensor& encoded, int t) {
  Tensor r(1, encoded.cols);
  std::copy(encoded.row(t), encoded.row(t) + encoded.cols, r.v.begin());
  return r;
}

}  // namespace

GreedyResult transducer_greedy(nn::ParameterSet& params,
                               const nn::ModelConfig& config,
                               const Tensor& encoded, int max_symbols) {
  if (max_symbols < 1)
    throw std::invalid_argument("transducer_greedy: max_symbols must be >= 1");
  const int sos = config.vocab_total - 2;  // see Vocabulary layout
  GreedyResult out;
  nn::LstmState state =
      nn::lstm_decode_step(params, config, sos, nn::lstm_initial_state(config));
  for (int t = 0; t < encoded.rows; ++t) {
    Tensor h_ae = enc_row(encoded, t);
    int emitted = 0;
    while (true) {
      Tensor lp = nn::joint_step(params, config, h_ae, state.h);
      int best = 0;
      for (int k = 1; k < lp.cols; ++k)
        if (lp.at(0, k) > lp.at(0, best)) best = k;
      if (best == 0) break;
      out.tokens.push_back(best);
      out.emissions.push_back({best, t});
      state = nn::lstm_decode_step(params, config, best, state);
      if (++emitted >= max_symbols) {
        ++out.cap_hits;
        break;
      }
    }
  }
  return out;
}

TokenSequence transducer_beam(nn::ParameterSet& params,
                              const nn::ModelConfig& config,
                              const Tensor& encoded, int beam,
                              int max_symbols) {
  if (beam < 1) throw std::invalid_argument("transducer_beam: beam >= 1");
  const int sos = config.vocab_total - 2;
  StateCache cache(params, config, sos);

  // score per prefix; merged by log-sum-exp
  std::map<TokenSequence, double> hyps{{{}, 0.0}};

  auto prune = [&](std::map<TokenSequence, double>& set, int keep) {
    if (int(set.size()) <= keep) return;
    std::vector<std::pair<TokenSequence, double>> v(set.begin(), set.end());
    // higher score first, then shorter prefix, then lexicographic
    std::stable_sort(v.begin(), v.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      if (a.first.size() != b.first.size())
        return a.first.size() < b.first.size();
      return a.first < b.first;
    });
    set.clear();
    for (int i = 0; i < keep; ++i) set.insert(v[std::size_t(i)]);
  };

  for (int t = 0; t < encoded.rows; ++t) {
    Tensor h_ae = enc_row(encoded, t);
    std::map<TokenSequence, double> finished;  // consumed blank at frame t
    std::map<TokenSequence, double> pending = std::move(hyps);
    for (int round = 0; !pending.empty(); ++round) {
      std::map<TokenSequence, double> next_pending;
      for (const auto& [prefix, score] : pending) {
        Tensor lp = nn::joint_step(params, config, h_ae, cache.get(prefix).h);
        auto merge = [](std::map<TokenSequence, double>& m,
                        const TokenSequence& p, double s) {
          auto [it, fresh] = m.emplace(p, s);
          if (!fresh) it->second = log_sum_exp(it->second, s);
        };
        merge(finished, prefix, score + lp.at(0, 0));
        if (round < max_symbols) {
          for (int k = 1; k < lp.cols; ++k) {
            TokenSequence ext = prefix;
            ext.push_back(k);
            merge(next_pending, ext, score + lp.at(0, k));
          }
        }
      }
      // Keep the top `beam` across both pools; only surviving pending
      // hypotheses are expanded further within this frame.
      std::map<TokenSequence, double> pool = finished;
      for (const auto& [p, s] : next_pending) pool.emplace(p, s);
      prune(pool, beam);
      pending.clear();
      for (const auto& [p, s] : pool) {
        auto it = next_pending.find(p);
        if (it != next_pending.end() && !finished.count(p))
          pending.emplace(p, s);
      }
      std::map<TokenSequence, double> kept;
      for (const auto& [p, s] : pool)
        if (finished.count(p) && !pending.count(p)) kept.emplace(p, s);
      finished = std::move(kept);
    }
    hyps = std::move(finished);
    prune(hyps, beam);
  }

  TokenSequence best;
  double best_score = kLogZero;
  for (const auto& [prefix, score] : hyps) {
    if (score > best_score ||
        (score == best_score &&
         (prefix.size() < best.size() ||
          (prefix.size() == best.size() && prefix < best)))) {
      best = prefix;
      best_score = score;
    }
  }
  return best;
}

}  // namespace maskstream::transducer
