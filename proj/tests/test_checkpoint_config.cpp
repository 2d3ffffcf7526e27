#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "maskstream/checkpoint.hpp"
#include "maskstream/config.hpp"
#include "maskstream/nn.hpp"
#include "maskstream/rng.hpp"

using namespace maskstream;
using namespace maskstream::pipeline;

namespace {

nn::ParameterSet small_params(std::uint64_t seed) {
  nn::ModelConfig mc;
  mc.input_dim = 4;
  mc.d_model = 8;
  mc.heads = 2;
  mc.ff = 12;
  mc.enc_layers = 1;
  mc.vocab_total = 9;
  mc.ctc_out = 5;
  Rng rng(seed);
  nn::ParameterSet p;
  nn::init_encoder(p, mc, rng);
  nn::init_ctc_head(p, mc, rng);
  return p;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST_CASE("checkpoint round-trips bitwise and re-saves identically") {
  auto dir = std::filesystem::temp_directory_path() / "ms_ckpt_test";
  std::filesystem::create_directories(dir);
  Checkpoint ck;
  ck.params = small_params(1);
  ck.metadata["stage"] = "1";
  ck.metadata["seed"] = "1";
  std::string p1 = (dir / "a.ckpt").string();
  std::string p2 = (dir / "b.ckpt").string();
  save_checkpoint(ck, p1);
  Checkpoint back = load_checkpoint(p1);
  CHECK(back.metadata == ck.metadata);
  REQUIRE(back.params.names() == ck.params.names());
  for (const auto& name : ck.params.names())
    CHECK(back.params.get(name).v == ck.params.get(name).v);
  save_checkpoint(back, p2);
  CHECK(read_file(p1) == read_file(p2));
  CHECK_THROWS(load_checkpoint((dir / "missing.ckpt").string()));
}

TEST_CASE("average_checkpoints: idempotent on identical inputs, means values") {
  Checkpoint a;
  a.params = small_params(2);
  Checkpoint avg_same = average_checkpoints({a, a, a});
  for (const auto& name : a.params.names())
    CHECK(avg_same.params.get(name).v == a.params.get(name).v);

  Checkpoint b;
  b.params = small_params(3);
  Checkpoint avg = average_checkpoints({a, b});
  for (const auto& name : a.params.names()) {
    const auto& va = a.params.get(name).v;
    const auto& vb = b.params.get(name).v;
    const auto& vm = avg.params.get(name).v;
    for (std::size_t i = 0; i < va.size(); ++i) {
      CHECK(vm[i] == doctest::Approx(0.5 * (va[i] + vb[i])).epsilon(1e-7));
      CHECK(double(float(vm[i])) == vm[i]);  // still f32-representable
    }
  }
  CHECK_THROWS(average_checkpoints({}));
}

TEST_CASE("transplant copies prefixed parameters and reports the rest") {
  nn::ParameterSet source = small_params(4);
  nn::ParameterSet target = small_params(5);
  TransplantReport rep = transplant(target, source, {"encoder."});
  CHECK(!rep.copied.empty());
  CHECK(!rep.kept.empty());
  for (const auto& name : target.names()) {
    if (name.rfind("encoder.", 0) == 0)
      CHECK(target.get(name).v == source.get(name).v);
  }
  // A non-mapped randomly initialized weight keeps its own values.
  CHECK(target.get("ctc.out.w").v != source.get("ctc.out.w").v);
  // Shape mismatch fails before any mutation.
  nn::ParameterSet other = small_params(6);
  nn::ParameterSet bad;
  bad.create("encoder.in_proj.w", 1, 1);
  auto before = other.get("encoder.in_proj.w").v;
  CHECK_THROWS(transplant(other, bad, {"encoder."}));
  CHECK(other.get("encoder.in_proj.w").v == before);
}

TEST_CASE("config: parse, overrides, unknown keys, round-trip, hash") {
  auto dir = std::filesystem::temp_directory_path() / "ms_cfg_test";
  std::filesystem::create_directories(dir);
  std::string path = (dir / "exp.cfg").string();
  {
    std::ofstream out(path);
    out << "# comment line\n"
        << "data.vocab_size = 12\n"
        << "model.policy = chunk:4\n"
        << "train.arch = transducer\n"
        << "train.seed = 9\n";
  }
  ExperimentConfig cfg = load_config(path);
  CHECK(cfg.vocab_size == 12);
  CHECK(cfg.policy == "chunk:4");
  CHECK(cfg.arch == Arch::Transducer);
  CHECK(cfg.seed == 9);
  CHECK(cfg.d_model == ExperimentConfig{}.d_model);  // default retained

  apply_override(cfg, "train.lr", "0.005");
  CHECK(cfg.lr == doctest::Approx(0.005));
  CHECK_THROWS_AS(apply_override(cfg, "train.typo", "1"),
                  std::invalid_argument);
  CHECK_THROWS_AS(apply_override(cfg, "lr", "1"), std::invalid_argument);

  // serialize -> reload is lossless.
  std::string resolved = (dir / "resolved.cfg").string();
  write_resolved_config(cfg, resolved);
  ExperimentConfig back = load_config(resolved);
  CHECK(serialize_config(back) == serialize_config(cfg));
  CHECK(config_hash(back) == config_hash(cfg));
  apply_override(back, "train.lr", "0.006");
  CHECK(config_hash(back) != config_hash(cfg));

  {
    std::ofstream out(path);
    out << "data.unknown_key = 1\n";
  }
  CHECK_THROWS_AS(load_config(path), std::invalid_argument);
}

TEST_CASE("config validation rejects inconsistent settings") {
  ExperimentConfig cfg;
  cfg.validate();  // defaults are fine
  ExperimentConfig bad = cfg;
  bad.vocab_size = 1;
  CHECK_THROWS(bad.validate());
  bad = cfg;
  bad.policy = "noise";
  CHECK_THROWS(bad.validate());
  bad = cfg;
  bad.alpha = 1.5;
  CHECK_THROWS(bad.validate());
  bad = cfg;
  bad.d_model = 6;
  bad.heads = 4;  // not divisible
  CHECK_THROWS(bad.validate());
}
