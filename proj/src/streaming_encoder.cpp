#include "maskstream/streaming_encoder.hpp"

#include <stdexcept>

namespace maskstream::streaming {

namespace {

Tape::Id linear(nn::Binding& b, const std::string& prefix, Tape::Id x) {
  Tape& t = b.tape();
  return t.add_rowvec(t.matmul(x, b(prefix + ".w")), b(prefix + ".b"));
}

Tape::Id norm(nn::Binding& b, const std::string& prefix, Tape::Id x) {
  return b.tape().layer_norm_rows(x, b(prefix + ".g"), b(prefix + ".b"));
}

Tape::Id ffn(nn::Binding& b, const std::string& prefix, Tape::Id x) {
  Tape& t = b.tape();
  return linear(b, prefix + ".ff2", t.relu_op(linear(b, prefix + ".ff1", x)));
}

}  // namespace

std::vector<Tape::Id> initial_context(nn::Binding& b,
                                      const nn::ModelConfig& c) {
  std::vector<Tape::Id> ctx;
  for (int l = 0; l < c.enc_layers; ++l)
    ctx.push_back(b.tape().leaf(Tensor(1, c.d_model), false));
  return ctx;
}

BlockEncodeResult block_encode(nn::Binding& b, const nn::ModelConfig& c,
                               const Tensor& z, int center_begin,
                               int center_end, int abs_offset,
                               const std::vector<Tape::Id>& context_prev) {
  Tape& t = b.tape();
  if (int(context_prev.size()) != c.enc_layers)
    throw std::invalid_argument("block_encode: one context per layer expected");
  if (center_begin < 0 || center_end > z.rows || center_begin >= center_end)
    throw std::invalid_argument("block_encode: bad central range");
  const int m = z.rows;

  Tape::Id x = t.leaf(z, false);
  Tape::Id h = linear(b, "encoder.in_proj", x);
  h = t.add_const(h, nn::positional_encoding(m, c.d_model, abs_offset));

  BlockEncodeResult out;
  std::vector<std::uint8_t> allow(std::size_t(m + 1) * (m + 1), 1);
  for (int l = 0; l < c.enc_layers; ++l) {
    std::string pre = "encoder.layer" + std::to_string(l);
    // Query rows: block frames plus the context slot (mean of the
    // central-frame layer inputs). Key/value rows: previous context
    // vector followed by the block frames.
    Tape::Id ctx_slot = t.mean_rows_range(h, center_begin, center_end);
    Tape::Id queries = t.concat_rows(h, ctx_slot);
    Tape::Id kv = t.concat_rows(context_prev[l], h);
    Tape::Id a = nn::multi_head_attention(b, pre + ".attn",
                                          norm(b, pre + ".norm1", queries),
                                          norm(b, pre + ".norm1", kv),
                                          c.heads, allow);
    Tape::Id res = t.add(queries, a);
    Tape::Id f = ffn(b, pre, norm(b, pre + ".norm2", res));
    Tape::Id layer_out = t.add(res, f);
    out.context.push_back(t.slice_rows(layer_out, m, m + 1));
    h = t.slice_rows(layer_out, 0, m);
  }
  Tape::Id final = norm(b, "encoder.final_norm", h);
  out.central = t.slice_rows(final, center_begin, center_end);
  return out;
}

std::vector<BlockEncodeResult> block_encode_sequence(
    nn::Binding& b, const nn::ModelConfig& c, const Tensor& features,
    const BlockSpec& spec) {
  std::vector<BlockEncodeResult> results;
  std::vector<Tape::Id> ctx = initial_context(b, c);
  for (const Block& blk : block_split(features.rows, spec)) {
    Tensor z(blk.future_end - blk.past_begin, features.cols);
    std::copy(features.row(blk.past_begin),
              features.row(blk.past_begin) + z.size(), z.v.begin());
    BlockEncodeResult r = block_encode(
        b, c, z, blk.center_begin - blk.past_begin,
        blk.center_end - blk.past_begin, blk.past_begin, ctx);
    ctx = r.context;
    results.push_back(std::move(r));
  }
  return results;
}

Tape::Id block_encoder_forward(nn::Binding& b, const nn::ModelConfig& c,
                               const Tensor& features, const BlockSpec& spec) {
  auto results = block_encode_sequence(b, c, features, spec);
  Tape::Id h = results[0].central;
  for (std::size_t i = 1; i < results.size(); ++i)
    h = b.tape().concat_rows(h, results[i].central);
  return h;
}

}  // namespace maskstream::streaming
