#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "maskstream/data.hpp"

using namespace maskstream;
using namespace maskstream::data;

namespace {

double row_dist(const Tensor& a, int ra, const Tensor& b, int rb) {
  double s = 0.0;
  for (int j = 0; j < a.cols; ++j) {
    double d = a.at(ra, j) - b.at(rb, j);
    s += d * d;
  }
  return s;
}

}  // namespace

TEST_CASE("vocabulary layout: blank 0, content 1..n, specials after") {
  Vocabulary v = build_vocab(30);
  CHECK(v.blank() == 0);
  CHECK(v.is_content(1));
  CHECK(v.is_content(30));
  CHECK(!v.is_content(0));
  CHECK(!v.is_content(31));
  CHECK(v.pad() == 31);
  CHECK(v.mask() == 32);
  CHECK(v.sos() == 33);
  CHECK(v.eos() == 34);
  CHECK(v.total() == 35);
  CHECK_THROWS_AS(build_vocab(1), std::invalid_argument);
}

TEST_CASE("synth_utterance: exact alignments, duration bounds, determinism") {
  Vocabulary v = build_vocab(5);
  ProtoTable protos = make_proto_table(v, 8, 42);
  SynthParams sp;
  sp.dur_min = 3;
  sp.dur_max = 8;
  sp.noise_sigma = 0.3;
  TokenSequence toks{2, 5, 5, 1};
  Utterance a = synth_utterance(toks, protos, sp, 7);
  Utterance b = synth_utterance(toks, protos, sp, 7);
  CHECK(a.features.v == b.features.v);  // bitwise determinism
  Utterance c = synth_utterance(toks, protos, sp, 8);
  CHECK(a.features.v != c.features.v);

  REQUIRE(a.ref_alignment.size() == toks.size());
  int cursor = 0;
  for (std::size_t i = 0; i < toks.size(); ++i) {
    const AlignEntry& e = a.ref_alignment[i];
    CHECK(e.token_id == toks[i]);
    CHECK(e.start_frame == cursor);
    int dur = e.end_frame - e.start_frame;
    CHECK(dur >= sp.dur_min);
    CHECK(dur <= sp.dur_max);
    cursor = e.end_frame;
  }
  CHECK(cursor == a.features.rows);

  // Values are float32-representable.
  for (double x : a.features.v) CHECK(double(float(x)) == x);

  CHECK_THROWS_AS(synth_utterance({}, protos, sp, 1), std::invalid_argument);
  CHECK_THROWS_AS(synth_utterance({0}, protos, sp, 1), std::invalid_argument);
  SynthParams bad = sp;
  bad.dur_min = 0;
  CHECK_THROWS_AS(synth_utterance(toks, protos, bad, 1),
                  std::invalid_argument);
}

TEST_CASE("zero noise: every frame equals its token's prototype exactly") {
  Vocabulary v = build_vocab(6);
  ProtoTable protos = make_proto_table(v, 4, 3);
  SynthParams sp;
  sp.noise_sigma = 0.0;
  Utterance u = synth_utterance({3, 1, 6}, protos, sp, 99);
  for (const AlignEntry& e : u.ref_alignment)
    for (int t = e.start_frame; t < e.end_frame; ++t) {
      // Nearest prototype is the source prototype, at distance 0.
      CHECK(row_dist(u.features, t, protos.protos, e.token_id - 1) == 0.0);
    }
}

TEST_CASE("augment zeroes spans deterministically and preserves shape") {
  Vocabulary v = build_vocab(4);
  ProtoTable protos = make_proto_table(v, 6, 1);
  SynthParams sp;
  Utterance u = synth_utterance({1, 2, 3, 4}, protos, sp, 5);
  Tensor a1 = augment(u.features, 2, 1, 3, 77);
  Tensor a2 = augment(u.features, 2, 1, 3, 77);
  CHECK(a1.v == a2.v);
  CHECK(a1.rows == u.features.rows);
  CHECK(a1.cols == u.features.cols);
  int changed = 0;
  for (std::size_t i = 0; i < a1.v.size(); ++i) {
    if (a1.v[i] != u.features.v[i]) {
      CHECK(a1.v[i] == 0.0);
      ++changed;
    }
  }
  CHECK(changed > 0);
  Tensor same = augment(u.features, 0, 0, 0, 77);
  CHECK(same.v == u.features.v);
}

TEST_CASE("feature files round-trip bitwise") {
  Vocabulary v = build_vocab(3);
  ProtoTable protos = make_proto_table(v, 5, 2);
  SynthParams sp;
  Utterance u = synth_utterance({1, 2, 3}, protos, sp, 11);
  auto dir = std::filesystem::temp_directory_path() / "ms_data_test";
  std::filesystem::create_directories(dir);
  std::string path = (dir / "feat.bin").string();
  write_features(path, u.features);
  Tensor back = read_features(path);
  CHECK(back.rows == u.features.rows);
  CHECK(back.cols == u.features.cols);
  CHECK(back.v == u.features.v);
  CHECK_THROWS(read_features((dir / "missing.bin").string()));
}

TEST_CASE("dataset generation and manifest round-trip") {
  Vocabulary v = build_vocab(8);
  GenParams gp;
  gp.n_utterances = 12;
  gp.tokens_min = 2;
  gp.tokens_max = 5;
  Dataset ds = generate_dataset(v, 6, gp, 1234, "tr");
  REQUIRE(int(ds.utterances.size()) == 12);
  for (const auto& u : ds.utterances) {
    CHECK(int(u.tokens.size()) >= 2);
    CHECK(int(u.tokens.size()) <= 5);
    for (int t : u.tokens) CHECK(v.is_content(t));
  }
  Dataset again = generate_dataset(v, 6, gp, 1234, "tr");
  for (std::size_t i = 0; i < ds.utterances.size(); ++i)
    CHECK(ds.utterances[i].features.v == again.utterances[i].features.v);
  Dataset other = generate_dataset(v, 6, gp, 1235, "tr");
  CHECK(ds.utterances[0].features.v != other.utterances[0].features.v);

  auto dir = std::filesystem::temp_directory_path() / "ms_manifest_test";
  std::filesystem::remove_all(dir);
  write_manifest(ds, dir.string());
  Dataset back = read_manifest((dir / "manifest.txt").string());
  REQUIRE(back.utterances.size() == ds.utterances.size());
  CHECK(back.vocab.size == ds.vocab.size);
  CHECK(back.dim == ds.dim);
  for (std::size_t i = 0; i < ds.utterances.size(); ++i) {
    const auto& a = ds.utterances[i];
    const auto& b = back.utterances[i];
    CHECK(a.id == b.id);
    CHECK(a.tokens == b.tokens);
    CHECK(a.features.v == b.features.v);
    REQUIRE(a.ref_alignment.size() == b.ref_alignment.size());
    for (std::size_t k = 0; k < a.ref_alignment.size(); ++k) {
      CHECK(a.ref_alignment[k].token_id == b.ref_alignment[k].token_id);
      CHECK(a.ref_alignment[k].start_frame == b.ref_alignment[k].start_frame);
      CHECK(a.ref_alignment[k].end_frame == b.ref_alignment[k].end_frame);
    }
  }
}
