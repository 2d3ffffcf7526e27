#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <vector>

#include "doctest.h"
#include "maskstream/nn.hpp"
#include "maskstream/rng.hpp"
#include "maskstream/streaming.hpp"
#include "maskstream/tape.hpp"

using namespace maskstream;
using namespace maskstream::nn;

namespace {

ModelConfig tiny_config() {
  ModelConfig mc;
  mc.input_dim = 5;
  mc.d_model = 8;
  mc.heads = 2;
  mc.ff = 12;
  mc.enc_layers = 2;
  mc.dec_layers = 1;
  mc.joint_dim = 6;
  mc.vocab_total = 9;  // 4 content + 5 specials
  mc.ctc_out = 5;
  return mc;
}

Tensor random_tensor(int r, int c, Rng& rng, double s = 1.0) {
  Tensor t{r, c};
  for (auto& v : t.v) v = rng.uniform(-s, s);
  return t;
}

// Worst relative error of d(loss)/d(param `name`) vs central differences.
double check_param_grad(ParameterSet& params, const std::string& name,
                        const std::function<Tape::Id(Binding&)>& forward) {
  Tensor& target = params.get(name);
  std::vector<double> at = target.v;
  Tape tape;
  Binding bind(tape, params);
  Tape::Id loss = forward(bind);
  tape.backward(loss);
  GradMap grads;
  bind.add_grads_to(grads);
  REQUIRE(grads.count(name));
  std::vector<double> analytic = grads[name].v;
  auto f = [&](const std::vector<double>& v) {
    target.v = v;
    Tape t2;
    Binding b2(t2, params);
    double out = t2.val(forward(b2)).at(0, 0);
    return out;
  };
  double err = grad_check(f, at, analytic, 1e-5);
  target.v = at;
  return err;
}

}  // namespace

TEST_CASE("positional encoding: unit-norm pairs and offset consistency") {
  Tensor pe = positional_encoding(6, 8);
  CHECK(pe.rows == 6);
  CHECK(pe.cols == 8);
  for (int t = 0; t < 6; ++t)
    for (int j = 0; j < 4; ++j) {
      double s = pe.at(t, 2 * j), c = pe.at(t, 2 * j + 1);
      CHECK(s * s + c * c == doctest::Approx(1.0));
    }
  Tensor shifted = positional_encoding(3, 8, 2);
  for (int t = 0; t < 3; ++t)
    for (int j = 0; j < 8; ++j)
      CHECK(shifted.at(t, j) == doctest::Approx(pe.at(t + 2, j)));
}

TEST_CASE("self-attention parameter gradients pass central differences") {
  ModelConfig mc = tiny_config();
  Rng rng(11);
  ParameterSet p;
  init_encoder(p, mc, rng);
  Tensor x = random_tensor(4, mc.d_model, rng);
  std::vector<std::uint8_t> allow =
      streaming::make_mask(streaming::AttentionPolicy::chunk(2), 4);
  auto fwd = [&](Binding& b) {
    Tape::Id xi = b.tape().leaf(x, false);
    Tape::Id y = self_attention(b, "encoder.layer0.attn", xi, mc.heads, allow);
    return b.tape().sum_all(b.tape().hadamard(y, y));
  };
  for (const char* name :
       {"encoder.layer0.attn.wq.w", "encoder.layer0.attn.wk.w",
        "encoder.layer0.attn.wv.w", "encoder.layer0.attn.wo.w"})
    CHECK(check_param_grad(p, name, fwd) < 1e-4);
}

TEST_CASE("recurrent cell gradients pass central differences") {
  ModelConfig mc = tiny_config();
  Rng rng(13);
  ParameterSet p;
  init_label_encoder(p, mc, rng);
  Tensor x = random_tensor(1, mc.d_model, rng);
  Tensor h0 = random_tensor(1, mc.d_model, rng, 0.5);
  Tensor c0 = random_tensor(1, mc.d_model, rng, 0.5);
  auto fwd = [&](Binding& b) {
    Tape& t = b.tape();
    Tape::Id xi = t.leaf(x, false);
    Tape::Id h = t.leaf(h0, false), c = t.leaf(c0, false);
    auto [h1, c1] = lstm_step(b, "label", xi, h, c);
    auto [h2, c2] = lstm_step(b, "label", h1, h1, c1);
    (void)c2;
    return t.sum_all(t.hadamard(h2, h2));
  };
  for (const char* name : {"label.wx", "label.wh", "label.b"})
    CHECK(check_param_grad(p, name, fwd) < 1e-4);
}

TEST_CASE("joint network gradients pass central differences") {
  ModelConfig mc = tiny_config();
  Rng rng(17);
  ParameterSet p;
  init_label_encoder(p, mc, rng);
  init_joint(p, mc, rng);
  Tensor enc = random_tensor(3, mc.d_model, rng);
  Tensor prefix_embed = random_tensor(2, mc.d_model, rng);
  auto fwd = [&](Binding& b) {
    Tape& t = b.tape();
    Tape::Id e = t.leaf(enc, false);
    Tape::Id l = t.leaf(prefix_embed, false);
    Tape::Id lat = joint_lattice(b, mc, e, l);
    return t.picked_nll_mean(lat, {{0, 1}, {3, 0}, {5, 2}});
  };
  for (const char* name : {"joint.acoustic.w", "joint.label.w", "joint.out.w",
                           "joint.out.b"})
    CHECK(check_param_grad(p, name, fwd) < 1e-4);
}

TEST_CASE("full encoder + ctc head gradient reaches the bottom layer") {
  ModelConfig mc = tiny_config();
  Rng rng(19);
  ParameterSet p;
  init_encoder(p, mc, rng);
  init_ctc_head(p, mc, rng);
  Tensor feats = random_tensor(5, mc.input_dim, rng);
  auto fwd = [&](Binding& b) {
    Tape::Id enc = encoder_forward(b, mc, feats,
                                   streaming::AttentionPolicy::full());
    Tape::Id grid = ctc_head_forward(b, enc);
    return b.tape().picked_nll_mean(grid, {{0, 1}, {2, 0}, {4, 3}});
  };
  CHECK(check_param_grad(p, "encoder.in_proj.w", fwd) < 1e-4);
  CHECK(check_param_grad(p, "encoder.layer0.ff1.w", fwd) < 1e-4);
  CHECK(check_param_grad(p, "ctc.out.w", fwd) < 1e-4);
}

TEST_CASE("decoder forward: causal masking blocks future positions") {
  ModelConfig mc = tiny_config();
  Rng rng(23);
  ParameterSet p;
  init_encoder(p, mc, rng);
  init_decoder(p, mc, rng);
  Tensor feats = random_tensor(6, mc.input_dim, rng);
  std::vector<int> toks{7, 1, 2, 3};  // sos, then content

  auto run = [&](const std::vector<int>& tk) {
    Tape tape;
    Binding b(tape, p);
    Tape::Id enc = encoder_forward(b, mc, feats,
                                   streaming::AttentionPolicy::full());
    Tape::Id logits = decoder_forward(b, mc, tk, enc, true);
    return tape.val(logits);
  };
  Tensor base = run(toks);
  std::vector<int> perturbed = toks;
  perturbed[3] = 4;  // change the last token only
  Tensor pert = run(perturbed);
  // Rows before the change are identical; the changed row differs.
  for (int j = 0; j < base.cols; ++j) {
    CHECK(base.at(0, j) == pert.at(0, j));
    CHECK(base.at(2, j) == pert.at(2, j));
  }
  double diff = 0.0;
  for (int j = 0; j < base.cols; ++j)
    diff += std::abs(base.at(3, j) - pert.at(3, j));
  CHECK(diff > 0.0);
}

TEST_CASE("Adam keeps parameters float32-representable and descends") {
  ModelConfig mc = tiny_config();
  Rng rng(29);
  ParameterSet p;
  init_encoder(p, mc, rng);
  for (const auto& name : p.names())
    for (double v : p.get(name).v) CHECK(double(float(v)) == v);

  // Minimize ||w||^2 on one tensor; loss decreases and f32 holds.
  Adam adam({1e-2});
  const std::string target = "encoder.in_proj.w";
  auto loss_of = [&]() {
    double s = 0.0;
    for (double v : p.get(target).v) s += v * v;
    return s;
  };
  double before = loss_of();
  for (int it = 0; it < 20; ++it) {
    GradMap g;
    Tensor gt = p.get(target);
    for (auto& v : gt.v) v *= 2.0;
    g[target] = gt;
    adam.step(p, g);
  }
  CHECK(loss_of() < before);
  for (const auto& name : p.names())
    for (double v : p.get(name).v) CHECK(double(float(v)) == v);
  CHECK(adam.steps_taken() == 20);
}
