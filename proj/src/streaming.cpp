#include "maskstream/streaming.hpp"

#include <algorithm>
#include <cstdio>
#include <stdexcept>

namespace maskstream::streaming {

AttentionPolicy AttentionPolicy::chunk(int size) {
  if (size < 1) throw std::invalid_argument("chunk size must be >= 1");
  AttentionPolicy p;
  p.kind = Kind::Chunk;
  p.chunk_size = size;
  return p;
}

AttentionPolicy AttentionPolicy::blocked(int n_left, int n_center, int n_right) {
  if (n_center < 1 || n_left < 0 || n_right < 0)
    throw std::invalid_argument("bad block spec");
  AttentionPolicy p;
  p.kind = Kind::Block;
  p.block = {n_left, n_center, n_right};
  return p;
}

std::string AttentionPolicy::str() const {
  char buf[64];
  switch (kind) {
    case Kind::Full:
      return "full";
    case Kind::Chunk:
      std::snprintf(buf, sizeof(buf), "chunk:%d", chunk_size);
      return buf;
    case Kind::Block:
      std::snprintf(buf, sizeof(buf), "block:%d:%d:%d", block.n_left,
                    block.n_center, block.n_right);
      return buf;
  }
  return "full";
}

AttentionPolicy parse_policy(const std::string& s) {
  if (s == "full") return AttentionPolicy::full();
  int a = 0, b = 0, c = 0;
  if (std::sscanf(s.c_str(), "chunk:%d", &a) == 1)
    return AttentionPolicy::chunk(a);
  if (std::sscanf(s.c_str(), "block:%d:%d:%d", &a, &b, &c) == 3)
    return AttentionPolicy::blocked(a, b, c);
  throw std::invalid_argument("unrecognized attention policy: " + s);
}

std::vector<std::uint8_t> make_mask(const AttentionPolicy& policy, int t_len) {
  if (t_len < 1) throw std::invalid_argument("make_mask: T must be >= 1");
  std::vector<std::uint8_t> m(std::size_t(t_len) * t_len, 1);
  if (policy.kind == AttentionPolicy::Kind::Full) return m;
  if (policy.kind == AttentionPolicy::Kind::Block)
    throw std::invalid_argument(
        "make_mask: block policies use the block encoder, not a global mask");
  const int c = policy.chunk_size;
  for (int t = 0; t < t_len; ++t) {
    int limit = std::min((t / c + 1) * c, t_len);
    for (int j = limit; j < t_len; ++j) m[std::size_t(t) * t_len + j] = 0;
  }
  return m;
}

int reach(const AttentionPolicy& policy, int t, int t_len) {
  switch (policy.kind) {
    case AttentionPolicy::Kind::Full:
      return t_len - 1;
    case AttentionPolicy::Kind::Chunk:
      return std::min((t / policy.chunk_size + 1) * policy.chunk_size,
                      t_len) - 1;
    case AttentionPolicy::Kind::Block: {
      const BlockSpec& b = policy.block;
      int block_idx = t / b.n_center;
      int future_end = std::min((block_idx + 1) * b.n_center + b.n_right,
                                t_len);
      return future_end - 1;
    }
  }
  return t_len - 1;
}

int latency_chunk_ms(int chunk_size, int frame_ms) {
  if (chunk_size < 1) throw std::invalid_argument("chunk_size must be >= 1");
  return (chunk_size - 1) * frame_ms;
}

int latency_block_ms(int n_center, int n_right, int frame_ms) {
  if (n_center < 1) throw std::invalid_argument("n_center must be >= 1");
  return (n_center + n_right - 1) * frame_ms;
}

int latency_ms(const AttentionPolicy& policy, int frame_ms) {
  switch (policy.kind) {
    case AttentionPolicy::Kind::Full:
      return -1;
    case AttentionPolicy::Kind::Chunk:
      return latency_chunk_ms(policy.chunk_size, frame_ms);
    case AttentionPolicy::Kind::Block:
      return latency_block_ms(policy.block.n_center, policy.block.n_right,
                              frame_ms);
  }
  return -1;
}

std::vector<Block> block_split(int t_len, const BlockSpec& spec) {
  if (t_len < 1) throw std::invalid_argument("block_split: T must be >= 1");
  if (spec.n_center < 1 || spec.n_left < 0 || spec.n_right < 0)
    throw std::invalid_argument("block_split: bad spec");
  std::vector<Block> blocks;
  int n_blocks = (t_len + spec.n_center - 1) / spec.n_center;
  for (int b = 0; b < n_blocks; ++b) {
    Block blk;
    blk.index = b + 1;
    blk.center_begin = b * spec.n_center;
    blk.center_end = std::min((b + 1) * spec.n_center, t_len);
    blk.past_begin = std::max(0, blk.center_begin - spec.n_left);
    blk.future_end = std::min(t_len, blk.center_end + spec.n_right);
    blocks.push_back(blk);
  }
  return blocks;
}

}  // namespace maskstream::streaming
