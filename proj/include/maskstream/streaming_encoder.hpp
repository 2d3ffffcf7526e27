#pragma once
// Contextual block encoder: per-block encoding with a per-layer context
// vector inherited from the previous block. Shares the encoder.*
// parameters with the Full/Chunk transformer encoder.

#include "maskstream/nn.hpp"
#include "maskstream/streaming.hpp"

namespace maskstream::streaming {

struct BlockEncodeResult {
  Tape::Id central = -1;          // central-frame outputs, final layer + norm
  std::vector<Tape::Id> context;  // per-layer context vectors c_b
};

// c_0: one zero vector per encoder layer.
std::vector<Tape::Id> initial_context(nn::Binding& b, const nn::ModelConfig& c);

// Encode one block. z holds rows [past_begin, future_end) of the input;
// center_* are positions relative to z's first row; abs_offset is the
// absolute frame index of z's first row (for positional encodings).
BlockEncodeResult block_encode(nn::Binding& b, const nn::ModelConfig& c,
                               const Tensor& z, int center_begin,
                               int center_end, int abs_offset,
                               const std::vector<Tape::Id>& context_prev);

// Sequential pass over all blocks; returns per-block central outputs.
// Concatenating them yields exactly T rows.
std::vector<BlockEncodeResult> block_encode_sequence(
    nn::Binding& b, const nn::ModelConfig& c, const Tensor& features,
    const BlockSpec& spec);

// Convenience: run the sequence and concatenate central outputs (T x d).
Tape::Id block_encoder_forward(nn::Binding& b, const nn::ModelConfig& c,
                               const Tensor& features, const BlockSpec& spec);

}  // namespace maskstream::streaming
