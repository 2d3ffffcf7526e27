#pragma once
// Differentiable building blocks: parameter registry, transformer
// encoder/decoder stacks, gated recurrent cell, joint network and Adam.
// Forward passes run on a Tape; parameters are bound per pass.

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "maskstream/streaming.hpp"
#include "maskstream/tape.hpp"

namespace maskstream::nn {

// Parameters live as float32-representable doubles so checkpoint
// round-trips (float32 payload) are bit-exact.
double round_f32(double x);

class ParameterSet {
 public:
  Tensor& create(const std::string& name, int rows, int cols);
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  bool has(const std::string& name) const;
  const std::vector<std::string>& names() const { return names_; }

  // Uniform(-limit, limit) rounded to float32.
  void init_uniform(const std::string& name, double limit, Rng& rng);

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<Tensor> values_;
};

using GradMap = std::unordered_map<std::string, Tensor>;

// Binds parameters of one ParameterSet to leaves on one tape.
class Binding {
 public:
  Binding(Tape& tape, ParameterSet& params) : tape_(tape), params_(params) {}

  Tape::Id operator()(const std::string& name);
  Tape& tape() { return tape_; }

  // After backward: accumulate parameter gradients by name.
  void add_grads_to(GradMap& grads) const;

 private:
  Tape& tape_;
  ParameterSet& params_;
  std::unordered_map<std::string, Tape::Id> bound_;
};

struct ModelConfig {
  int input_dim = 16;
  int d_model = 64;
  int heads = 4;
  int ff = 128;
  int enc_layers = 4;
  int dec_layers = 2;
  double dropout = 0.0;
  int vocab_total = 0;   // embedding rows (content + specials)
  int ctc_out = 0;       // blank + content
  int joint_dim = 64;    // transducer joint width
};

// Sinusoidal position encodings for rows [offset, offset+rows).
Tensor positional_encoding(int rows, int d_model, int offset = 0);

// ---- parameter initialisation (names are stable, enumeration ordered) ----
void init_encoder(ParameterSet& p, const ModelConfig& c, Rng& rng);
void init_ctc_head(ParameterSet& p, const ModelConfig& c, Rng& rng);
void init_decoder(ParameterSet& p, const ModelConfig& c, Rng& rng);
void init_label_encoder(ParameterSet& p, const ModelConfig& c, Rng& rng);
void init_joint(ParameterSet& p, const ModelConfig& c, Rng& rng);

// ---- forward passes ----

// Multi-head attention with an explicit allow-mask (rows: queries,
// cols: keys). Throws on an all-false mask row.
Tape::Id multi_head_attention(Binding& b, const std::string& prefix,
                              Tape::Id q_in, Tape::Id kv_in, int heads,
                              const std::vector<std::uint8_t>& allow);

Tape::Id self_attention(Binding& b, const std::string& prefix, Tape::Id x,
                        int heads, const std::vector<std::uint8_t>& allow);

// One pre-norm encoder layer: x + MHA(LN(x)), then + FFN(LN(.)).
Tape::Id encoder_layer(Binding& b, const std::string& prefix, Tape::Id x,
                       int heads, const std::vector<std::uint8_t>& allow);

// Full/Chunk encoder over T frames (Block policies go through
// streaming::block_encode_sequence). Output T x d_model.
Tape::Id encoder_forward(Binding& b, const ModelConfig& c,
                         const Tensor& features,
                         const streaming::AttentionPolicy& policy);

// Log posteriors T x ctc_out.
Tape::Id ctc_head_forward(Binding& b, Tape::Id encoded);

// Transformer decoder over a fixed-length token row; causal=false gives
// the bidirectional CMLM decoder, causal=true the beam-search decoder.
// Returns logits U x vocab_total.
Tape::Id decoder_forward(Binding& b, const ModelConfig& c,
                         const std::vector<int>& tokens, Tape::Id memory,
                         bool causal);

struct LstmState {
  Tensor h;  // 1 x width
  Tensor c;
};

// One gated recurrent step on the tape; x is 1 x in, h/c are 1 x width.
std::pair<Tape::Id, Tape::Id> lstm_step(Binding& b, const std::string& prefix,
                                        Tape::Id x, Tape::Id h, Tape::Id c);

// Label encoder: embeds [sos, y_1..y_U] and runs the recurrent cell,
// returning the (U+1) x d_model matrix of prefix states.
Tape::Id label_encoder_forward(Binding& b, const ModelConfig& c,
                               const std::vector<int>& prefix_tokens);

// Joint log-probabilities for every (t, u); row index = t*(U+1)+u,
// columns are blank + content tokens.
Tape::Id joint_lattice(Binding& b, const ModelConfig& c, Tape::Id encoded,
                       Tape::Id label_states);

// Single-step joint for decoding: 1 x ctc_out log-probs.
Tensor joint_step(ParameterSet& p, const ModelConfig& c, const Tensor& h_ae,
                  const Tensor& h_le);

// One recurrent decode step outside any training tape.
LstmState lstm_decode_step(ParameterSet& p, const ModelConfig& c, int token,
                           const LstmState& state);
LstmState lstm_initial_state(const ModelConfig& c);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

  // Bias-corrected moment update, then parameter step; parameters are
  // re-rounded to float32 afterwards. lr_scale implements warmup.
  void step(ParameterSet& params, const GradMap& grads, double lr_scale = 1.0);

  int steps_taken() const { return t_; }

 private:
  AdamConfig cfg_;
  int t_ = 0;
  std::unordered_map<std::string, Tensor> m_, v_;
};

}  // namespace maskstream::nn
