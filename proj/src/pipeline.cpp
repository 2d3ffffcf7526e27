#include "maskstream/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "maskstream/ctc.hpp"
#include "maskstream/maskctc.hpp"
#include "maskstream/streaming_encoder.hpp"
#include "maskstream/transducer.hpp"

namespace maskstream::pipeline {

nn::ModelConfig model_config(const ExperimentConfig& cfg) {
  nn::ModelConfig mc;
  mc.input_dim = cfg.dim;
  mc.d_model = cfg.d_model;
  mc.heads = cfg.heads;
  mc.ff = cfg.ff;
  mc.enc_layers = cfg.enc_layers;
  mc.dec_layers = cfg.dec_layers;
  mc.joint_dim = cfg.joint_dim;
  mc.vocab_total = cfg.vocab_size + 5;
  mc.ctc_out = cfg.vocab_size + 1;
  return mc;
}

nn::ParameterSet init_params(const ExperimentConfig& cfg, Arch arch) {
  nn::ModelConfig mc = model_config(cfg);
  Rng rng(Rng::mix(cfg.seed, 0x696e6974));  // "init"
  nn::ParameterSet p;
  nn::init_encoder(p, mc, rng);
  switch (arch) {
    case Arch::MaskCtc:
    case Arch::Cbs:
      nn::init_ctc_head(p, mc, rng);
      nn::init_decoder(p, mc, rng);
      break;
    case Arch::Transducer:
      nn::init_label_encoder(p, mc, rng);
      nn::init_joint(p, mc, rng);
      break;
  }
  return p;
}

namespace {

Tensor maybe_augment(const ExperimentConfig& cfg, const Tensor& feats,
                     Rng* rng) {
  if (!rng || cfg.augment_max_width == 0 ||
      (cfg.augment_time_masks == 0 && cfg.augment_freq_masks == 0))
    return feats;
  return data::augment(feats, cfg.augment_time_masks, cfg.augment_freq_masks,
                       cfg.augment_max_width, rng->next_u64());
}

void check_trainable(const ExperimentConfig& cfg, const data::Dataset& ds) {
  const data::Vocabulary vocab = data::build_vocab(cfg.vocab_size);
  bool needs_ctc = cfg.arch != Arch::Transducer;
  for (const auto& u : ds.utterances) {
    if (u.tokens.empty())
      throw std::invalid_argument("dataset: empty transcript in " + u.id);
    for (int t : u.tokens)
      if (!vocab.is_content(t))
        throw std::invalid_argument("dataset: non-content token in " + u.id);
    if (needs_ctc && u.features.rows < ctc::min_frames(u.tokens))
      throw std::invalid_argument("dataset: CTC-infeasible utterance " + u.id);
  }
}

}  // namespace

double utterance_loss(nn::ParameterSet& params, const ExperimentConfig& cfg,
                      const data::Utterance& utt, nn::GradMap* grads,
                      Rng* rng) {
  const nn::ModelConfig mc = model_config(cfg);
  const data::Vocabulary vocab = data::build_vocab(cfg.vocab_size);
  Tape tape;
  nn::Binding bind(tape, params);
  Tensor feats = maybe_augment(cfg, utt.features, rng);

  Tape::Id loss = -1;
  switch (cfg.arch) {
    case Arch::MaskCtc: {
      Tape::Id enc = nn::encoder_forward(bind, mc, feats,
                                         streaming::AttentionPolicy::full());
      Tape::Id grid = nn::ctc_head_forward(bind, enc);
      ctc::LossResult cres = ctc::ctc_loss(tape.val(grid), utt.tokens);
      Tape::Id ctc_node = tape.scalar_with_grad(cres.loss, grid, cres.grad);
      Rng fallback(Rng::mix(cfg.seed, 0x6d61736b));
      Rng& mask_rng = rng ? *rng : fallback;
      maskctc::MaskedPair pair =
          maskctc::sample_mask(utt.tokens, vocab, mask_rng);
      Tape::Id logits =
          nn::decoder_forward(bind, mc, pair.observed, enc, false);
      Tape::Id cmlm = maskctc::cmlm_loss(tape, logits, utt.tokens, pair);
      loss = maskctc::maskctc_loss(tape, ctc_node, cmlm, cfg.alpha);
      break;
    }
    case Arch::Transducer: {
      Tape::Id enc =
          nn::encoder_forward(bind, mc, feats, cfg.attention_policy());
      data::TokenSequence prefix{vocab.sos()};
      prefix.insert(prefix.end(), utt.tokens.begin(), utt.tokens.end());
      Tape::Id labels = nn::label_encoder_forward(bind, mc, prefix);
      Tape::Id lattice = nn::joint_lattice(bind, mc, enc, labels);
      transducer::LossResult res =
          transducer::rnnt_loss(tape.val(lattice), feats.rows, utt.tokens);
      loss = tape.scalar_with_grad(res.loss, lattice, res.grad);
      break;
    }
    case Arch::Cbs: {
      streaming::AttentionPolicy pol = cfg.attention_policy();
      Tape::Id enc =
          pol.kind == streaming::AttentionPolicy::Kind::Block
              ? streaming::block_encoder_forward(bind, mc, feats, pol.block)
              : nn::encoder_forward(bind, mc, feats, pol);
      Tape::Id grid = nn::ctc_head_forward(bind, enc);
      ctc::LossResult cres = ctc::ctc_loss(tape.val(grid), utt.tokens);
      Tape::Id ctc_node = tape.scalar_with_grad(cres.loss, grid, cres.grad);
      data::TokenSequence dec_in{vocab.sos()};
      dec_in.insert(dec_in.end(), utt.tokens.begin(), utt.tokens.end());
      Tape::Id logits = nn::decoder_forward(bind, mc, dec_in, enc, true);
      Tape::Id lp = tape.log_softmax_rows(logits);
      std::vector<std::pair<int, int>> picks;
      for (std::size_t i = 0; i < utt.tokens.size(); ++i)
        picks.emplace_back(int(i), utt.tokens[i]);
      picks.emplace_back(int(utt.tokens.size()), vocab.eos());
      Tape::Id ce = tape.picked_nll_mean(lp, picks);
      loss = tape.add(tape.scale(ctc_node, cfg.cbs_ctc_weight),
                      tape.scale(ce, 1.0 - cfg.cbs_ctc_weight));
      break;
    }
  }

  double value = tape.val(loss).at(0, 0);
  if (grads) {
    tape.backward(loss);
    bind.add_grads_to(*grads);
  }
  return value;
}

double validation_loss(nn::ParameterSet& params, const ExperimentConfig& cfg,
                       const data::Dataset& ds) {
  double total = 0.0;
  for (std::size_t i = 0; i < ds.utterances.size(); ++i) {
    // Fixed per-utterance rng: mask draws are deterministic across epochs.
    Rng rng(Rng::mix(cfg.seed, 0x76616c00 + i));  // "val"
    total += utterance_loss(params, cfg, ds.utterances[i], nullptr, &rng);
  }
  return total / double(ds.utterances.size());
}

double teacher_forced_accuracy(nn::ParameterSet& params,
                               const ExperimentConfig& cfg,
                               const data::Dataset& ds) {
  const nn::ModelConfig mc = model_config(cfg);
  const data::Vocabulary vocab = data::build_vocab(cfg.vocab_size);
  const streaming::AttentionPolicy pol = cfg.attention_policy();
  long correct = 0, total = 0;
  for (const auto& u : ds.utterances) {
    Tape tape;
    nn::Binding bind(tape, params);
    Tape::Id enc =
        pol.kind == streaming::AttentionPolicy::Kind::Block
            ? streaming::block_encoder_forward(bind, mc, u.features, pol.block)
            : nn::encoder_forward(bind, mc, u.features, pol);
    data::TokenSequence dec_in{vocab.sos()};
    dec_in.insert(dec_in.end(), u.tokens.begin(), u.tokens.end());
    Tape::Id logits = nn::decoder_forward(bind, mc, dec_in, enc, true);
    const Tensor& lv = tape.val(logits);
    data::TokenSequence target = u.tokens;
    target.push_back(vocab.eos());
    for (std::size_t i = 0; i < target.size(); ++i) {
      int best = 0;
      for (int k = 1; k < lv.cols; ++k)
        if (lv.at(int(i), k) > lv.at(int(i), best)) best = k;
      correct += best == target[i];
      ++total;
    }
  }
  return total ? double(correct) / double(total) : 0.0;
}

namespace {

struct Snapshot {
  nn::ParameterSet params;
  double metric = 0.0;
  int epoch = 0;
};

TrainResult run_training(const ExperimentConfig& cfg,
                         const data::Dataset& train,
                         const data::Dataset* valid, nn::ParameterSet params,
                         const std::string& stage,
                         const std::vector<std::string>& frozen) {
  check_trainable(cfg, train);
  nn::Adam adam({cfg.lr});
  Rng rng(Rng::mix(cfg.seed, 0x747261696e));  // "train"
  const int n = int(train.utterances.size());
  std::vector<int> order(std::size_t(n), 0);
  std::iota(order.begin(), order.end(), 0);

  const bool select_by_accuracy = cfg.arch == Arch::Cbs;
  TrainResult result;
  std::vector<Snapshot> snapshots;
  int step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (int i = n - 1; i > 0; --i)
      std::swap(order[std::size_t(i)],
                order[std::size_t(rng.uniform_int(0, i))]);
    double epoch_loss = 0.0;
    for (int start = 0; start < n; start += cfg.batch) {
      const int end = std::min(n, start + cfg.batch);
      nn::GradMap grads;
      for (int i = start; i < end; ++i) {
        double l = utterance_loss(params, cfg,
                                  train.utterances[std::size_t(order[std::size_t(i)])],
                                  &grads, &rng);
        if (!std::isfinite(l))
          throw std::runtime_error("training diverged: non-finite loss at epoch " +
                                   std::to_string(epoch));
        epoch_loss += l;
      }
      for (auto& [name, g] : grads)
        for (auto& e : g.v) e /= double(end - start);
      for (const auto& f : frozen) grads.erase(f);
      ++step;
      double warm = cfg.warmup_steps > 0
                        ? std::min(1.0, double(step) / cfg.warmup_steps)
                        : 1.0;
      adam.step(params, grads, warm);
    }
    result.loss_history.push_back(epoch_loss / n);

    Snapshot snap;
    snap.params = params;
    snap.epoch = epoch;
    if (valid)
      snap.metric = select_by_accuracy
                        ? teacher_forced_accuracy(params, cfg, *valid)
                        : validation_loss(params, cfg, *valid);
    else
      snap.metric = select_by_accuracy ? -result.loss_history.back()
                                       : result.loss_history.back();
    snapshots.push_back(std::move(snap));
  }

  // k best snapshots: max accuracy for CBS, min loss otherwise.
  std::stable_sort(snapshots.begin(), snapshots.end(),
                   [&](const Snapshot& a, const Snapshot& b) {
                     return select_by_accuracy ? a.metric > b.metric
                                               : a.metric < b.metric;
                   });
  const int k = std::min<int>(cfg.keep_best, int(snapshots.size()));
  std::vector<Checkpoint> best;
  for (int i = 0; i < k; ++i) {
    Checkpoint c;
    c.params = snapshots[std::size_t(i)].params;
    best.push_back(std::move(c));
  }
  result.final = average_checkpoints(best);
  result.final.metadata["stage"] = stage;
  result.final.metadata["epochs"] = std::to_string(cfg.epochs);
  result.final.metadata["config_hash"] = config_hash(cfg);
  result.final.metadata["seed"] = std::to_string(cfg.seed);
  result.final.metadata["arch"] = arch_name(cfg.arch);
  result.final.metadata["policy"] = cfg.policy;
  std::ostringstream hist;
  for (std::size_t i = 0; i < result.loss_history.size(); ++i)
    hist << (i ? "," : "") << result.loss_history[i];
  result.final.metadata["loss_history"] = hist.str();
  return result;
}

}  // namespace

TrainResult train_maskctc(const ExperimentConfig& cfg,
                          const data::Dataset& train,
                          const data::Dataset* valid) {
  if (cfg.arch != Arch::MaskCtc)
    throw std::invalid_argument("train_maskctc: train.arch must be maskctc");
  if (cfg.policy != "full")
    throw std::invalid_argument(
        "train_maskctc: pre-training uses a Full-attention encoder");
  return run_training(cfg, train, valid, init_params(cfg, cfg.arch), "1", {});
}

TrainResult train_streaming(const ExperimentConfig& cfg,
                            const data::Dataset& train, const Checkpoint* init,
                            const data::Dataset* valid) {
  if (cfg.arch == Arch::MaskCtc)
    throw std::invalid_argument("train_streaming: arch must be transducer or cbs");
  streaming::AttentionPolicy pol = cfg.attention_policy();
  if (pol.kind == streaming::AttentionPolicy::Kind::Full)
    throw std::invalid_argument(
        "train_streaming: policy must be chunk or block");
  nn::ParameterSet params = init_params(cfg, cfg.arch);
  std::vector<std::string> frozen;
  if (init) {
    std::vector<std::string> prefixes{"encoder."};
    if (cfg.arch == Arch::Cbs) prefixes.push_back("ctc.");
    TransplantReport report = transplant(params, init->params, prefixes);
    if (cfg.freeze_transplanted) frozen = report.copied;
  }
  return run_training(cfg, train, valid, std::move(params), "2", frozen);
}

}  // namespace maskstream::pipeline
