#pragma once
// Synthetic dataset generation with frame-exact reference alignments,
// plus the manifest / feature-file formats used by the CLI.

#include <cstdint>
#include <string>
#include <vector>

#include "maskstream/tensor.hpp"

namespace maskstream::data {

using TokenSequence = std::vector<int>;

constexpr int kFrameMs = 40;

// Content ids are 1..size; blank is 0; the four remaining specials sit
// directly after the content ids.
struct Vocabulary {
  int size = 0;  // content token count

  int blank() const { return 0; }
  int pad() const { return size + 1; }
  int mask() const { return size + 2; }
  int sos() const { return size + 3; }
  int eos() const { return size + 4; }
  int total() const { return size + 5; }
  bool is_content(int id) const { return id >= 1 && id <= size; }
};

// Throws std::invalid_argument for n_content < 2.
Vocabulary build_vocab(int n_content);

struct AlignEntry {
  int token_id = 0;
  int start_frame = 0;  // inclusive
  int end_frame = 0;    // exclusive
  int spike_frame = -1; // optional, -1 when unset
};

using Alignment = std::vector<AlignEntry>;

struct ProtoTable {
  Tensor protos;  // size x dim
  std::uint64_t seed = 0;
};

ProtoTable make_proto_table(const Vocabulary& vocab, int dim,
                            std::uint64_t seed, double scale = 0.30);

struct Utterance {
  std::string id;
  Tensor features;  // T x D
  TokenSequence tokens;
  Alignment ref_alignment;
};

struct SynthParams {
  int dur_min = 3;
  int dur_max = 8;
  double noise_sigma = 0.3;
  // Frames of silence (zero prototype + noise) appended after the last token,
  // giving the model an explicit end-of-utterance cue. Silence is not a
  // vocabulary token and gets no alignment entry.
  int edge_silence = 0;
};

// Each token is realized as d ~ Uniform{dur_min..dur_max} frames of its
// prototype plus iid Gaussian noise. Values are rounded to float32 so a
// feature file round-trip is lossless.
Utterance synth_utterance(const TokenSequence& tokens, const ProtoTable& protos,
                          const SynthParams& params, std::uint64_t seed);

// SpecAugment-style zero masking of time spans and feature rows.
Tensor augment(const Tensor& features, int n_time_masks, int n_freq_masks,
               int max_width, std::uint64_t seed);

struct Dataset {
  Vocabulary vocab;
  int dim = 0;
  int frame_ms = kFrameMs;
  std::uint64_t seed = 0;
  std::vector<Utterance> utterances;
};

struct GenParams {
  int n_utterances = 0;
  int tokens_min = 4;
  int tokens_max = 12;
  SynthParams synth;
};

// Splits that must share token acoustics (train/test) pass the same
// prototype table; otherwise prototypes are derived from the seed.
Dataset generate_dataset(const Vocabulary& vocab, int dim,
                         const GenParams& params, std::uint64_t seed,
                         const std::string& id_prefix,
                         const ProtoTable* shared_protos = nullptr);

// Feature file: u32le T, u32le D, then T*D float32le row-major.
void write_features(const std::string& path, const Tensor& features);
Tensor read_features(const std::string& path);

// Manifest: '#key=value' metadata lines, then one tab-separated record
// per utterance: id, relative feature path, token ids, alignment triples.
void write_manifest(const Dataset& dataset, const std::string& dir,
                    const std::string& manifest_name = "manifest.txt");
Dataset read_manifest(const std::string& manifest_path);

}  // namespace maskstream::data
