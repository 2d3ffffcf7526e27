#include "maskstream/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace maskstream::nn {

double round_f32(double x) { return double(float(x)); }

Tensor& ParameterSet::create(const std::string& name, int rows, int cols) {
  if (index_.count(name))
    throw std::invalid_argument("parameter exists: " + name);
  index_[name] = values_.size();
  names_.push_back(name);
  values_.emplace_back(rows, cols);
  return values_.back();
}

Tensor& ParameterSet::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end())
    throw std::invalid_argument("no such parameter: " + name);
  return values_[it->second];
}

const Tensor& ParameterSet::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end())
    throw std::invalid_argument("no such parameter: " + name);
  return values_[it->second];
}

bool ParameterSet::has(const std::string& name) const {
  return index_.count(name) != 0;
}

void ParameterSet::init_uniform(const std::string& name, double limit,
                                Rng& rng) {
  for (auto& e : get(name).v) e = round_f32(rng.uniform(-limit, limit));
}

Tape::Id Binding::operator()(const std::string& name) {
  auto it = bound_.find(name);
  if (it != bound_.end()) return it->second;
  Tape::Id id = tape_.leaf(params_.get(name));
  bound_[name] = id;
  return id;
}

void Binding::add_grads_to(GradMap& grads) const {
  for (const auto& [name, id] : bound_) {
    const Tensor& g = tape_.grad(id);
    auto it = grads.find(name);
    if (it == grads.end())
      grads.emplace(name, g);
    else
      add_inplace(it->second, g);
  }
}

Tensor positional_encoding(int rows, int d_model, int offset) {
  Tensor pe(rows, d_model);
  for (int r = 0; r < rows; ++r) {
    double pos = double(r + offset);
    for (int i = 0; i < d_model / 2; ++i) {
      double freq = std::pow(10000.0, -2.0 * i / d_model);
      pe.at(r, 2 * i) = std::sin(pos * freq);
      if (2 * i + 1 < d_model) pe.at(r, 2 * i + 1) = std::cos(pos * freq);
    }
  }
  return pe;
}

// ------------------------------------------------------------- init

namespace {

void init_linear(ParameterSet& p, const std::string& prefix, int in, int out,
                 Rng& rng) {
  p.create(prefix + ".w", in, out);
  p.create(prefix + ".b", 1, out);
  p.init_uniform(prefix + ".w", 1.0 / std::sqrt(double(in)), rng);
}

void init_norm(ParameterSet& p, const std::string& prefix, int d) {
  p.create(prefix + ".g", 1, d).fill(1.0);
  p.create(prefix + ".b", 1, d);
}

void init_mha(ParameterSet& p, const std::string& prefix, int d, Rng& rng) {
  for (const char* n : {".wq", ".wk", ".wv", ".wo"})
    init_linear(p, prefix + n, d, d, rng);
}

void init_tf_layer_common(ParameterSet& p, const std::string& prefix, int d,
                          int ff, Rng& rng) {
  init_linear(p, prefix + ".ff1", d, ff, rng);
  init_linear(p, prefix + ".ff2", ff, d, rng);
}

Tape::Id linear(Binding& b, const std::string& prefix, Tape::Id x) {
  Tape& t = b.tape();
  return t.add_rowvec(t.matmul(x, b(prefix + ".w")), b(prefix + ".b"));
}

Tape::Id norm(Binding& b, const std::string& prefix, Tape::Id x) {
  return b.tape().layer_norm_rows(x, b(prefix + ".g"), b(prefix + ".b"));
}

Tape::Id ffn(Binding& b, const std::string& prefix, Tape::Id x) {
  Tape& t = b.tape();
  return linear(b, prefix + ".ff2", t.relu_op(linear(b, prefix + ".ff1", x)));
}

std::vector<std::uint8_t> full_allow(int rows, int cols) {
  return std::vector<std::uint8_t>(std::size_t(rows) * cols, 1);
}

std::vector<std::uint8_t> causal_allow(int n) {
  std::vector<std::uint8_t> m(std::size_t(n) * n, 0);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c <= r; ++c) m[std::size_t(r) * n + c] = 1;
  return m;
}

}  // namespace

void init_encoder(ParameterSet& p, const ModelConfig& c, Rng& rng) {
  if (c.d_model % c.heads != 0)
    throw std::invalid_argument("d_model must be divisible by heads");
  init_linear(p, "encoder.in_proj", c.input_dim, c.d_model, rng);
  for (int l = 0; l < c.enc_layers; ++l) {
    std::string pre = "encoder.layer" + std::to_string(l);
    init_norm(p, pre + ".norm1", c.d_model);
    init_mha(p, pre + ".attn", c.d_model, rng);
    init_norm(p, pre + ".norm2", c.d_model);
    init_tf_layer_common(p, pre, c.d_model, c.ff, rng);
  }
  init_norm(p, "encoder.final_norm", c.d_model);
}

void init_ctc_head(ParameterSet& p, const ModelConfig& c, Rng& rng) {
  init_linear(p, "ctc.out", c.d_model, c.ctc_out, rng);
}

void init_decoder(ParameterSet& p, const ModelConfig& c, Rng& rng) {
  p.create("decoder.embed", c.vocab_total, c.d_model);
  p.init_uniform("decoder.embed", 1.0 / std::sqrt(double(c.d_model)), rng);
  for (int l = 0; l < c.dec_layers; ++l) {
    std::string pre = "decoder.layer" + std::to_string(l);
    init_norm(p, pre + ".norm1", c.d_model);
    init_mha(p, pre + ".self", c.d_model, rng);
    init_norm(p, pre + ".norm2", c.d_model);
    init_mha(p, pre + ".cross", c.d_model, rng);
    init_norm(p, pre + ".norm3", c.d_model);
    init_tf_layer_common(p, pre, c.d_model, c.ff, rng);
  }
  init_norm(p, "decoder.final_norm", c.d_model);
  init_linear(p, "decoder.out", c.d_model, c.vocab_total, rng);
}

void init_label_encoder(ParameterSet& p, const ModelConfig& c, Rng& rng) {
  p.create("label.embed", c.vocab_total, c.d_model);
  p.init_uniform("label.embed", 1.0 / std::sqrt(double(c.d_model)), rng);
  p.create("label.wx", c.d_model, 4 * c.d_model);
  p.create("label.wh", c.d_model, 4 * c.d_model);
  p.create("label.b", 1, 4 * c.d_model);
  p.init_uniform("label.wx", 1.0 / std::sqrt(double(c.d_model)), rng);
  p.init_uniform("label.wh", 1.0 / std::sqrt(double(c.d_model)), rng);
}

void init_joint(ParameterSet& p, const ModelConfig& c, Rng& rng) {
  init_linear(p, "joint.acoustic", c.d_model, c.joint_dim, rng);
  init_linear(p, "joint.label", c.d_model, c.joint_dim, rng);
  init_linear(p, "joint.out", c.joint_dim, c.ctc_out, rng);
}

// ------------------------------------------------------------- forward

Tape::Id multi_head_attention(Binding& b, const std::string& prefix,
                              Tape::Id q_in, Tape::Id kv_in, int heads,
                              const std::vector<std::uint8_t>& allow) {
  Tape& t = b.tape();
  const int d = t.val(q_in).cols;
  const int dh = d / heads;
  Tape::Id q = linear(b, prefix + ".wq", q_in);
  Tape::Id k = linear(b, prefix + ".wk", kv_in);
  Tape::Id v = linear(b, prefix + ".wv", kv_in);
  Tape::Id merged = -1;
  for (int h = 0; h < heads; ++h) {
    Tape::Id qh = t.slice_cols(q, h * dh, (h + 1) * dh);
    Tape::Id kh = t.slice_cols(k, h * dh, (h + 1) * dh);
    Tape::Id vh = t.slice_cols(v, h * dh, (h + 1) * dh);
    Tape::Id scores = t.scale(t.matmul(qh, kh, false, true),
                              1.0 / std::sqrt(double(dh)));
    Tape::Id weights = t.softmax_rows_masked(scores, allow);
    Tape::Id ctx = t.matmul(weights, vh);
    merged = h == 0 ? ctx : t.concat_cols(merged, ctx);
  }
  return linear(b, prefix + ".wo", merged);
}

Tape::Id self_attention(Binding& b, const std::string& prefix, Tape::Id x,
                        int heads, const std::vector<std::uint8_t>& allow) {
  return multi_head_attention(b, prefix, x, x, heads, allow);
}

Tape::Id encoder_layer(Binding& b, const std::string& prefix, Tape::Id x,
                       int heads, const std::vector<std::uint8_t>& allow) {
  Tape& t = b.tape();
  Tape::Id a = self_attention(b, prefix + ".attn", norm(b, prefix + ".norm1", x),
                              heads, allow);
  Tape::Id h = t.add(x, a);
  Tape::Id f = ffn(b, prefix, norm(b, prefix + ".norm2", h));
  return t.add(h, f);
}

Tape::Id encoder_forward(Binding& b, const ModelConfig& c,
                         const Tensor& features,
                         const streaming::AttentionPolicy& policy) {
  Tape& t = b.tape();
  if (features.rows < 1) throw std::invalid_argument("encoder: empty input");
  auto allow = streaming::make_mask(policy, features.rows);
  Tape::Id x = t.leaf(features, false);
  Tape::Id h = linear(b, "encoder.in_proj", x);
  h = t.add_const(h, positional_encoding(features.rows, c.d_model));
  for (int l = 0; l < c.enc_layers; ++l)
    h = encoder_layer(b, "encoder.layer" + std::to_string(l), h, c.heads,
                      allow);
  return norm(b, "encoder.final_norm", h);
}

Tape::Id ctc_head_forward(Binding& b, Tape::Id encoded) {
  return b.tape().log_softmax_rows(linear(b, "ctc.out", encoded));
}

Tape::Id decoder_forward(Binding& b, const ModelConfig& c,
                         const std::vector<int>& tokens, Tape::Id memory,
                         bool causal) {
  Tape& t = b.tape();
  if (tokens.empty()) throw std::invalid_argument("decoder: empty input");
  const int u_len = int(tokens.size());
  const int t_len = t.val(memory).rows;
  auto self_allow = causal ? causal_allow(u_len) : full_allow(u_len, u_len);
  auto cross_allow = full_allow(u_len, t_len);
  Tape::Id h = t.scale(t.gather_rows(b("decoder.embed"), tokens),
                       std::sqrt(double(c.d_model)));
  h = t.add_const(h, positional_encoding(u_len, c.d_model));
  for (int l = 0; l < c.dec_layers; ++l) {
    std::string pre = "decoder.layer" + std::to_string(l);
    Tape::Id a = self_attention(b, pre + ".self", norm(b, pre + ".norm1", h),
                                c.heads, self_allow);
    h = t.add(h, a);
    Tape::Id x = multi_head_attention(b, pre + ".cross",
                                      norm(b, pre + ".norm2", h), memory,
                                      c.heads, cross_allow);
    h = t.add(h, x);
    Tape::Id f = ffn(b, pre, norm(b, pre + ".norm3", h));
    h = t.add(h, f);
  }
  return linear(b, "decoder.out", norm(b, "decoder.final_norm", h));
}

std::pair<Tape::Id, Tape::Id> lstm_step(Binding& b, const std::string& prefix,
                                        Tape::Id x, Tape::Id h, Tape::Id c) {
  Tape& t = b.tape();
  const int width = t.val(h).cols;
  Tape::Id gates = t.add_rowvec(
      t.add(t.matmul(x, b(prefix + ".wx")), t.matmul(h, b(prefix + ".wh"))),
      b(prefix + ".b"));
  Tape::Id gi = t.sigmoid_op(t.slice_cols(gates, 0, width));
  Tape::Id gf = t.sigmoid_op(t.slice_cols(gates, width, 2 * width));
  Tape::Id gg = t.tanh_op(t.slice_cols(gates, 2 * width, 3 * width));
  Tape::Id go = t.sigmoid_op(t.slice_cols(gates, 3 * width, 4 * width));
  Tape::Id c_new = t.add(t.hadamard(gf, c), t.hadamard(gi, gg));
  Tape::Id h_new = t.hadamard(go, t.tanh_op(c_new));
  return {h_new, c_new};
}

Tape::Id label_encoder_forward(Binding& b, const ModelConfig& c,
                               const std::vector<int>& prefix_tokens) {
  Tape& t = b.tape();
  if (prefix_tokens.empty())
    throw std::invalid_argument("label encoder: prefix must start at sos");
  Tape::Id emb = t.gather_rows(b("label.embed"), prefix_tokens);
  Tape::Id h = t.leaf(Tensor(1, c.d_model), false);
  Tape::Id cc = t.leaf(Tensor(1, c.d_model), false);
  Tape::Id out = -1;
  for (std::size_t u = 0; u < prefix_tokens.size(); ++u) {
    Tape::Id x = t.slice_rows(emb, int(u), int(u) + 1);
    auto [h2, c2] = lstm_step(b, "label", x, h, cc);
    h = h2;
    cc = c2;
    out = u == 0 ? h : t.concat_rows(out, h);
  }
  return out;
}

Tape::Id joint_lattice(Binding& b, const ModelConfig&, Tape::Id encoded,
                       Tape::Id label_states) {
  Tape& t = b.tape();
  const int t_len = t.val(encoded).rows;
  const int u_len = t.val(label_states).rows;
  Tape::Id pa = linear(b, "joint.acoustic", encoded);
  Tape::Id pl = linear(b, "joint.label", label_states);
  std::vector<int> ia(std::size_t(t_len) * u_len), il(ia.size());
  for (int ti = 0; ti < t_len; ++ti)
    for (int u = 0; u < u_len; ++u) {
      ia[std::size_t(ti) * u_len + u] = ti;
      il[std::size_t(ti) * u_len + u] = u;
    }
  Tape::Id h = t.tanh_op(t.add(t.gather_rows(pa, ia), t.gather_rows(pl, il)));
  return t.log_softmax_rows(linear(b, "joint.out", h));
}

Tensor joint_step(ParameterSet& p, const ModelConfig& c, const Tensor& h_ae,
                  const Tensor& h_le) {
  Tape t;
  Binding b(t, p);
  Tape::Id a = t.leaf(h_ae, false);
  Tape::Id l = t.leaf(h_le, false);
  Tape::Id h = t.tanh_op(t.add(linear(b, "joint.acoustic", a),
                               linear(b, "joint.label", l)));
  Tape::Id lp = t.log_softmax_rows(linear(b, "joint.out", h));
  (void)c;
  return t.val(lp);
}

LstmState lstm_initial_state(const ModelConfig& c) {
  return {Tensor(1, c.d_model), Tensor(1, c.d_model)};
}

LstmState lstm_decode_step(ParameterSet& p, const ModelConfig& c, int token,
                           const LstmState& state) {
  Tape t;
  Binding b(t, p);
  Tape::Id emb = t.gather_rows(b("label.embed"), {token});
  Tape::Id h = t.leaf(state.h, false);
  Tape::Id cc = t.leaf(state.c, false);
  auto [h2, c2] = lstm_step(b, "label", emb, h, cc);
  (void)c;
  return {t.val(h2), t.val(c2)};
}

void Adam::step(ParameterSet& params, const GradMap& grads, double lr_scale) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
  for (const auto& name : params.names()) {
    auto git = grads.find(name);
    if (git == grads.end()) continue;
    Tensor& p = params.get(name);
    const Tensor& g = git->second;
    if (!p.same_shape(g))
      throw std::invalid_argument("adam: gradient shape mismatch for " + name);
    Tensor& m = m_.try_emplace(name, p.rows, p.cols).first->second;
    Tensor& v = v_.try_emplace(name, p.rows, p.cols).first->second;
    const double lr = cfg_.lr * lr_scale;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m.v[i] = cfg_.beta1 * m.v[i] + (1.0 - cfg_.beta1) * g.v[i];
      v.v[i] = cfg_.beta2 * v.v[i] + (1.0 - cfg_.beta2) * g.v[i] * g.v[i];
      double mhat = m.v[i] / bc1;
      double vhat = v.v[i] / bc2;
      p.v[i] = round_f32(p.v[i] - lr * mhat / (std::sqrt(vhat) + cfg_.eps));
    }
  }
}

}  // namespace maskstream::nn
