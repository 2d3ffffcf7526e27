#pragma once
// Streaming geometry: attention policies, chunk masks, look-ahead reach,
// latency formulas and block segmentation. The contextual block encoder
// itself lives in streaming_encoder.hpp on top of the nn layers.

#include <cstdint>
#include <string>
#include <vector>

namespace maskstream::streaming {

struct BlockSpec {
  int n_left = 0;
  int n_center = 1;
  int n_right = 0;
};

struct AttentionPolicy {
  enum class Kind { Full, Chunk, Block };
  Kind kind = Kind::Full;
  int chunk_size = 0;  // Chunk only
  BlockSpec block;     // Block only

  static AttentionPolicy full() { return {}; }
  static AttentionPolicy chunk(int size);
  static AttentionPolicy blocked(int n_left, int n_center, int n_right);

  std::string str() const;
};

AttentionPolicy parse_policy(const std::string& s);  // "full" | "chunk:4" | "block:8:4:2"

// T x T row-major allow-matrix. Chunk(c): frame t attends to all frames
// t' < (floor(t/c)+1)*c. Block policies are handled by the block encoder,
// not a global mask.
std::vector<std::uint8_t> make_mask(const AttentionPolicy& policy, int t_len);

// Highest frame index that can influence the encoder output at frame t.
// Identical per layer for chunk masks, so it does not grow with depth.
int reach(const AttentionPolicy& policy, int t, int t_len);

// (chunk_size - 1) * frame_ms
int latency_chunk_ms(int chunk_size, int frame_ms = 40);

// (n_center + n_right - 1) * frame_ms
int latency_block_ms(int n_center, int n_right, int frame_ms = 40);

int latency_ms(const AttentionPolicy& policy, int frame_ms = 40);  // -1 for Full

struct Block {
  int index = 0;        // 1-based
  int past_begin = 0;   // [past_begin, center_begin)
  int center_begin = 0; // [center_begin, center_end)
  int center_end = 0;
  int future_end = 0;   // [center_end, future_end)
};

// Central ranges partition [0, T); past/future clipped at the edges.
std::vector<Block> block_split(int t_len, const BlockSpec& spec);

}  // namespace maskstream::streaming
