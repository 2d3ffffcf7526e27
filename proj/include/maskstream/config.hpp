#pragma once
// Experiment configuration: flat key=value text with dotted sections.
// Unknown keys are hard errors, both in files and in CLI overrides.

#include <cstdint>
#include <string>
#include <vector>

#include "maskstream/streaming.hpp"

namespace maskstream::pipeline {

enum class Arch { MaskCtc, Transducer, Cbs };

Arch parse_arch(const std::string& s);
std::string arch_name(Arch a);

struct ExperimentConfig {
  // data
  int vocab_size = 30;
  int dim = 16;
  int dur_min = 3;
  int dur_max = 8;
  double noise_sigma = 0.3;
  double proto_scale = 0.30;
  int edge_silence = 0;
  int tokens_min = 4;
  int tokens_max = 12;
  int train_utts = 200;
  int test_utts = 50;
  int augment_time_masks = 0;
  int augment_freq_masks = 0;
  int augment_max_width = 0;

  // model
  int d_model = 64;
  int heads = 4;
  int ff = 128;
  int enc_layers = 4;
  int dec_layers = 2;
  int joint_dim = 64;
  std::string policy = "full";

  // training
  Arch arch = Arch::MaskCtc;
  int epochs = 20;
  int batch = 16;
  double lr = 1e-3;
  int warmup_steps = 200;
  double alpha = 0.3;            // Mask-CTC: CTC weight
  double cbs_ctc_weight = 0.3;   // CBS stage 2: CTC weight
  int keep_best = 3;
  bool freeze_transplanted = false;
  std::uint64_t seed = 1;

  // decoding
  int beam = 10;
  int max_symbols = 5;

  streaming::AttentionPolicy attention_policy() const {
    return streaming::parse_policy(policy);
  }

  void validate() const;  // throws std::invalid_argument
};

ExperimentConfig load_config(const std::string& path);
void apply_override(ExperimentConfig& cfg, const std::string& key,
                    const std::string& value);
std::string serialize_config(const ExperimentConfig& cfg);
void write_resolved_config(const ExperimentConfig& cfg,
                           const std::string& path);

// FNV-1a of the serialized config, hex; stored in checkpoint metadata.
std::string config_hash(const ExperimentConfig& cfg);

}  // namespace maskstream::pipeline
