#pragma once
// Two-stage training orchestration: Mask-CTC pre-training (stage 1),
// streaming fine-tuning (stage 2), snapshot selection and averaging.

#include <optional>

#include "maskstream/checkpoint.hpp"
#include "maskstream/config.hpp"
#include "maskstream/data.hpp"

namespace maskstream::pipeline {

nn::ModelConfig model_config(const ExperimentConfig& cfg);

// Fresh parameter set for an architecture, deterministically initialized
// from cfg.seed.
nn::ParameterSet init_params(const ExperimentConfig& cfg, Arch arch);

// Per-utterance training loss on its own tape; used by the trainer and
// by tests. Returns the loss and accumulates parameter grads.
double utterance_loss(nn::ParameterSet& params, const ExperimentConfig& cfg,
                      const data::Utterance& utt, nn::GradMap* grads,
                      Rng* augment_rng);

struct TrainResult {
  Checkpoint final;                  // averaged best snapshots
  std::vector<double> loss_history;  // mean train loss per epoch
};

// Stage 1: Mask-CTC with a Full-attention encoder. Throws on a
// non-Full policy or non-finite loss.
TrainResult train_maskctc(const ExperimentConfig& cfg,
                          const data::Dataset& train,
                          const data::Dataset* valid = nullptr);

// Stage 2: Transducer (chunk policy, RNN-T loss) or CBS (block policy,
// CTC + attention cross-entropy). init, when given, transplants
// encoder.* (and ctc.* for CBS) from the stage-1 checkpoint.
TrainResult train_streaming(const ExperimentConfig& cfg,
                            const data::Dataset& train,
                            const Checkpoint* init,
                            const data::Dataset* valid = nullptr);

// Validation metrics used for snapshot selection.
double validation_loss(nn::ParameterSet& params, const ExperimentConfig& cfg,
                       const data::Dataset& ds);
double teacher_forced_accuracy(nn::ParameterSet& params,
                               const ExperimentConfig& cfg,
                               const data::Dataset& ds);

}  // namespace maskstream::pipeline
