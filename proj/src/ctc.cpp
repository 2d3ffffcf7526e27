#include "maskstream/ctc.hpp"

#include <algorithm>
#include <cmath>

namespace maskstream::ctc {

double log_sum_exp(double a, double b) {
  if (a < b) std::swap(a, b);
  if (b <= kLogZero / 2) return a;
  return a + std::log1p(std::exp(b - a));
}

int min_frames(const TokenSequence& target) {
  int repeats = 0;
  for (std::size_t i = 1; i < target.size(); ++i)
    if (target[i] == target[i - 1]) ++repeats;
  return int(target.size()) + repeats;
}

namespace {

// Augmented label row: blank, y1, blank, y2, ..., blank.
std::vector<int> augmented(const TokenSequence& target) {
  std::vector<int> lab(2 * target.size() + 1, 0);
  for (std::size_t i = 0; i < target.size(); ++i) lab[2 * i + 1] = target[i];
  return lab;
}

void check_feasible(const Tensor& grid, const TokenSequence& target) {
  if (target.empty())
    throw std::invalid_argument("ctc: empty target");
  for (int y : target)
    if (y < 1 || y >= grid.cols)
      throw std::invalid_argument("ctc: target id out of grid range");
  if (grid.rows < min_frames(target))
    throw InfeasibleTargetError("ctc: target needs " +
                                std::to_string(min_frames(target)) +
                                " frames, grid has " +
                                std::to_string(grid.rows));
}

// Whether state s can be reached from s-2 (skip a blank): only when the
// skipped state is a blank between two distinct labels.
bool can_skip(const std::vector<int>& lab, int s) {
  return s >= 2 && lab[s] != 0 && lab[s] != lab[s - 2];
}

}  // namespace

LossResult ctc_loss(const Tensor& logprobs, const TokenSequence& target) {
  check_feasible(logprobs, target);
  const int t_len = logprobs.rows;
  const auto lab = augmented(target);
  const int n_s = int(lab.size());

  auto lp = [&](int t, int s) { return logprobs.at(t, lab[s]); };

  // Forward.
  Tensor alpha = Tensor::full(t_len, n_s, kLogZero);
  alpha.at(0, 0) = lp(0, 0);
  if (n_s > 1) alpha.at(0, 1) = lp(0, 1);
  for (int t = 1; t < t_len; ++t) {
    for (int s = 0; s < n_s; ++s) {
      double a = alpha.at(t - 1, s);
      if (s >= 1) a = log_sum_exp(a, alpha.at(t - 1, s - 1));
      if (can_skip(lab, s)) a = log_sum_exp(a, alpha.at(t - 1, s - 2));
      alpha.at(t, s) = a <= kLogZero / 2 ? kLogZero : a + lp(t, s);
    }
  }
  double log_z = alpha.at(t_len - 1, n_s - 1);
  if (n_s > 1) log_z = log_sum_exp(log_z, alpha.at(t_len - 1, n_s - 2));

  // Backward.
  Tensor beta = Tensor::full(t_len, n_s, kLogZero);
  beta.at(t_len - 1, n_s - 1) = lp(t_len - 1, n_s - 1);
  if (n_s > 1) beta.at(t_len - 1, n_s - 2) = lp(t_len - 1, n_s - 2);
  for (int t = t_len - 2; t >= 0; --t) {
    for (int s = 0; s < n_s; ++s) {
      double b = beta.at(t + 1, s);
      if (s + 1 < n_s) b = log_sum_exp(b, beta.at(t + 1, s + 1));
      if (s + 2 < n_s && can_skip(lab, s + 2))
        b = log_sum_exp(b, beta.at(t + 1, s + 2));
      beta.at(t, s) = b <= kLogZero / 2 ? kLogZero : b + lp(t, s);
    }
  }

  LossResult out;
  out.loss = -log_z;
  out.grad = Tensor(t_len, logprobs.cols);
  // gamma(t,s) = alpha*beta/(p_t(lab_s)*Z); d(-logZ)/d logp_t(k) is the
  // negated sum of gamma over states carrying label k.
  for (int t = 0; t < t_len; ++t) {
    for (int s = 0; s < n_s; ++s) {
      double g = alpha.at(t, s) + beta.at(t, s) - lp(t, s) - log_z;
      if (g > kLogZero / 2) out.grad.at(t, lab[s]) -= std::exp(g);
    }
  }
  return out;
}

TokenSequence ctc_greedy(const Tensor& logprobs) {
  TokenSequence out;
  int prev = 0;
  for (int t = 0; t < logprobs.rows; ++t) {
    const double* row = logprobs.row(t);
    int best = 0;
    for (int k = 1; k < logprobs.cols; ++k)
      if (row[k] > row[best]) best = k;
    if (best != 0 && best != prev) out.push_back(best);
    prev = best;
  }
  return out;
}

Alignment ctc_viterbi_align(const Tensor& logprobs,
                            const TokenSequence& target) {
  check_feasible(logprobs, target);
  const int t_len = logprobs.rows;
  const auto lab = augmented(target);
  const int n_s = int(lab.size());
  auto lp = [&](int t, int s) { return logprobs.at(t, lab[s]); };

  Tensor delta = Tensor::full(t_len, n_s, kLogZero);
  std::vector<std::vector<int>> from(std::size_t(t_len),
                                     std::vector<int>(std::size_t(n_s), -1));
  delta.at(0, 0) = lp(0, 0);
  if (n_s > 1) delta.at(0, 1) = lp(0, 1);
  for (int t = 1; t < t_len; ++t) {
    for (int s = 0; s < n_s; ++s) {
      // Tie-break prefers staying in s: on equal scores the transition
      // into s happens as early as possible.
      double best = delta.at(t - 1, s);
      int arg = s;
      if (s >= 1 && delta.at(t - 1, s - 1) > best) {
        best = delta.at(t - 1, s - 1);
        arg = s - 1;
      }
      if (can_skip(lab, s) && delta.at(t - 1, s - 2) > best) {
        best = delta.at(t - 1, s - 2);
        arg = s - 2;
      }
      if (best <= kLogZero / 2) continue;
      delta.at(t, s) = best + lp(t, s);
      from[std::size_t(t)][std::size_t(s)] = arg;
    }
  }

  int s_end = n_s - 1;
  if (n_s > 1 && delta.at(t_len - 1, n_s - 2) > delta.at(t_len - 1, n_s - 1))
    s_end = n_s - 2;
  std::vector<int> path(std::size_t(t_len), 0);
  int s = s_end;
  for (int t = t_len - 1; t >= 0; --t) {
    path[std::size_t(t)] = s;
    if (t > 0) s = from[std::size_t(t)][std::size_t(s)];
  }

  Alignment align;
  for (int t = 0; t < t_len; ++t) {
    int st = path[std::size_t(t)];
    if (lab[st] == 0) continue;
    if (!align.empty() && path[std::size_t(t - 1)] == st) {
      align.back().end_frame = t + 1;
    } else {
      data::AlignEntry e;
      e.token_id = lab[st];
      e.start_frame = t;
      e.end_frame = t + 1;
      align.push_back(e);
    }
  }
  for (auto& e : align) {
    int best = e.start_frame;
    for (int t = e.start_frame; t < e.end_frame; ++t)
      if (logprobs.at(t, e.token_id) > logprobs.at(best, e.token_id)) best = t;
    e.spike_frame = best;
  }
  return align;
}

std::vector<int> ctc_spikes(const Tensor& logprobs,
                            const TokenSequence& decoded) {
  std::vector<int> spikes;
  int prev = 0;
  int run_start = -1, run_tok = 0;
  std::size_t next = 0;
  auto flush = [&](int run_end) {
    if (run_tok == 0) return;
    if (next >= decoded.size() || decoded[next] != run_tok)
      throw std::invalid_argument("ctc_spikes: decoded does not match grid");
    int best = run_start;
    for (int t = run_start; t < run_end; ++t)
      if (logprobs.at(t, run_tok) > logprobs.at(best, run_tok)) best = t;
    spikes.push_back(best);
    ++next;
    run_tok = 0;
  };
  for (int t = 0; t < logprobs.rows; ++t) {
    const double* row = logprobs.row(t);
    int best = 0;
    for (int k = 1; k < logprobs.cols; ++k)
      if (row[k] > row[best]) best = k;
    if (best != prev) {
      flush(t);
      if (best != 0) {
        run_tok = best;
        run_start = t;
      }
    }
    prev = best;
  }
  flush(logprobs.rows);
  if (next != decoded.size())
    throw std::invalid_argument("ctc_spikes: decoded does not match grid");
  return spikes;
}

}  // namespace maskstream::ctc
