#include "maskstream/data.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace fs = std::filesystem;

namespace maskstream::data {

namespace {

double to_f32(double x) { return double(float(x)); }

void put_u32(std::ostream& os, std::uint32_t x) {
  unsigned char b[4] = {(unsigned char)(x & 0xff), (unsigned char)(x >> 8),
                        (unsigned char)(x >> 16), (unsigned char)(x >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw std::runtime_error("feature file: truncated header");
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) |
         (std::uint32_t(b[2]) << 16) | (std::uint32_t(b[3]) << 24);
}

}  // namespace

Vocabulary build_vocab(int n_content) {
  if (n_content < 2)
    throw std::invalid_argument("build_vocab: need at least 2 content tokens");
  Vocabulary v;
  v.size = n_content;
  return v;
}

ProtoTable make_proto_table(const Vocabulary& vocab, int dim,
                            std::uint64_t seed, double scale) {
  if (scale <= 0.0) throw std::invalid_argument("proto scale must be > 0");
  Rng rng(Rng::mix(seed, 0x70726f74));  // "prot"
  ProtoTable t;
  t.seed = seed;
  t.protos = Tensor(vocab.size, dim);
  // Prototype scale sets per-frame SNR against the noise floor: small
  // enough that one frame rarely identifies a token, so recognizers
  // must integrate evidence across a token's span.
  for (auto& e : t.protos.v) e = to_f32(scale * rng.normal());
  return t;
}

Utterance synth_utterance(const TokenSequence& tokens, const ProtoTable& protos,
                          const SynthParams& params, std::uint64_t seed) {
  if (tokens.empty())
    throw std::invalid_argument("synth_utterance: empty token list");
  if (params.dur_min < 1 || params.dur_max < params.dur_min)
    throw std::invalid_argument("synth_utterance: bad duration range");
  for (int tok : tokens)
    if (tok < 1 || tok > protos.protos.rows)
      throw std::invalid_argument("synth_utterance: non-content token id");

  if (params.edge_silence < 0)
    throw std::invalid_argument("synth_utterance: edge_silence < 0");

  Rng rng(seed);
  std::vector<int> durs(tokens.size());
  int total = params.edge_silence;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    durs[i] = int(rng.uniform_int(params.dur_min, params.dur_max));
    total += durs[i];
  }

  Utterance u;
  u.tokens = tokens;
  u.features = Tensor(total, protos.protos.cols);
  auto fill_silence = [&](int from, int n) {
    for (int f = from; f < from + n; ++f) {
      double* row = u.features.row(f);
      for (int d = 0; d < u.features.cols; ++d) {
        double x = params.noise_sigma > 0.0 ? params.noise_sigma * rng.normal()
                                            : 0.0;
        row[d] = to_f32(x);
      }
    }
  };
  int frame = 0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const double* proto = protos.protos.row(tokens[i] - 1);
    AlignEntry a;
    a.token_id = tokens[i];
    a.start_frame = frame;
    a.end_frame = frame + durs[i];
    u.ref_alignment.push_back(a);
    for (int f = 0; f < durs[i]; ++f, ++frame) {
      double* row = u.features.row(frame);
      for (int d = 0; d < u.features.cols; ++d) {
        double x = proto[d];
        if (params.noise_sigma > 0.0) x += params.noise_sigma * rng.normal();
        row[d] = to_f32(x);
      }
    }
  }
  fill_silence(frame, params.edge_silence);
  return u;
}

Tensor augment(const Tensor& features, int n_time_masks, int n_freq_masks,
               int max_width, std::uint64_t seed) {
  if (max_width < 0) throw std::invalid_argument("augment: max_width < 0");
  Tensor out = features;
  if (max_width == 0) return out;
  Rng rng(seed);
  for (int m = 0; m < n_time_masks; ++m) {
    int w = int(rng.uniform_int(0, max_width));
    w = std::min(w, out.rows);
    if (w == 0) continue;
    int t0 = int(rng.uniform_int(0, out.rows - w));
    for (int t = t0; t < t0 + w; ++t)
      std::fill(out.row(t), out.row(t) + out.cols, 0.0);
  }
  for (int m = 0; m < n_freq_masks; ++m) {
    int w = int(rng.uniform_int(0, max_width));
    w = std::min(w, out.cols);
    if (w == 0) continue;
    int c0 = int(rng.uniform_int(0, out.cols - w));
    for (int t = 0; t < out.rows; ++t)
      std::fill(out.row(t) + c0, out.row(t) + c0 + w, 0.0);
  }
  return out;
}

Dataset generate_dataset(const Vocabulary& vocab, int dim,
                         const GenParams& params, std::uint64_t seed,
                         const std::string& id_prefix,
                         const ProtoTable* shared_protos) {
  Dataset ds;
  ds.vocab = vocab;
  ds.dim = dim;
  ds.seed = seed;
  ProtoTable protos = shared_protos ? *shared_protos
                                    : make_proto_table(vocab, dim, seed);
  Rng meta(Rng::mix(seed, 0x6d657461));  // "meta"
  for (int i = 0; i < params.n_utterances; ++i) {
    int n_tok = int(meta.uniform_int(params.tokens_min, params.tokens_max));
    TokenSequence toks(std::size_t(n_tok), 0);
    for (auto& t : toks) t = int(meta.uniform_int(1, vocab.size));
    Utterance u =
        synth_utterance(toks, protos, params.synth, Rng::mix(seed, i));
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s%05d", id_prefix.c_str(), i);
    u.id = buf;
    ds.utterances.push_back(std::move(u));
  }
  return ds;
}

void write_features(const std::string& path, const Tensor& features) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for write: " + path);
  put_u32(os, std::uint32_t(features.rows));
  put_u32(os, std::uint32_t(features.cols));
  std::vector<float> buf(features.size());
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = float(features.v[i]);
  os.write(reinterpret_cast<const char*>(buf.data()),
           std::streamsize(buf.size() * sizeof(float)));
  if (!os) throw std::runtime_error("write failed: " + path);
}

Tensor read_features(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open feature file: " + path);
  std::uint32_t t = get_u32(is);
  std::uint32_t d = get_u32(is);
  Tensor out{int(t), int(d)};
  std::vector<float> buf(out.size());
  is.read(reinterpret_cast<char*>(buf.data()),
          std::streamsize(buf.size() * sizeof(float)));
  if (!is) throw std::runtime_error("feature file truncated: " + path);
  for (std::size_t i = 0; i < buf.size(); ++i) out.v[i] = double(buf[i]);
  return out;
}

void write_manifest(const Dataset& dataset, const std::string& dir,
                    const std::string& manifest_name) {
  fs::create_directories(fs::path(dir) / "features");
  std::string tmp = (fs::path(dir) / (manifest_name + ".tmp")).string();
  {
    std::ofstream os(tmp);
    if (!os) throw std::runtime_error("cannot open for write: " + tmp);
    os << "#vocab_size=" << dataset.vocab.size << "\n";
    os << "#dim=" << dataset.dim << "\n";
    os << "#frame_ms=" << dataset.frame_ms << "\n";
    os << "#seed=" << dataset.seed << "\n";
    for (const auto& u : dataset.utterances) {
      std::string rel = "features/" + u.id + ".bin";
      write_features((fs::path(dir) / rel).string(), u.features);
      os << u.id << "\t" << rel << "\t";
      for (std::size_t i = 0; i < u.tokens.size(); ++i)
        os << (i ? " " : "") << u.tokens[i];
      os << "\t";
      for (std::size_t i = 0; i < u.ref_alignment.size(); ++i) {
        const auto& a = u.ref_alignment[i];
        os << (i ? "," : "") << a.token_id << ":" << a.start_frame << ":"
           << a.end_frame;
      }
      os << "\n";
    }
    if (!os) throw std::runtime_error("manifest write failed");
  }
  fs::rename(tmp, fs::path(dir) / manifest_name);
}

Dataset read_manifest(const std::string& manifest_path) {
  std::ifstream is(manifest_path);
  if (!is) throw std::runtime_error("cannot open manifest: " + manifest_path);
  fs::path dir = fs::path(manifest_path).parent_path();
  Dataset ds;
  ds.vocab.size = -1;
  ds.dim = -1;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      auto eq = line.find('=');
      if (eq == std::string::npos)
        throw std::runtime_error("manifest: bad metadata line: " + line);
      std::string key = line.substr(1, eq - 1);
      std::string value = line.substr(eq + 1);
      if (key == "vocab_size")
        ds.vocab.size = std::stoi(value);
      else if (key == "dim")
        ds.dim = std::stoi(value);
      else if (key == "frame_ms")
        ds.frame_ms = std::stoi(value);
      else if (key == "seed")
        ds.seed = std::stoull(value);
      else
        throw std::runtime_error("manifest: unknown metadata key: " + key);
      continue;
    }
    std::istringstream ls(line);
    std::string id, rel, toks, aligns;
    if (!std::getline(ls, id, '\t') || !std::getline(ls, rel, '\t') ||
        !std::getline(ls, toks, '\t') || !std::getline(ls, aligns))
      throw std::runtime_error("manifest: malformed record: " + line);
    Utterance u;
    u.id = id;
    u.features = read_features((dir / rel).string());
    std::istringstream ts(toks);
    for (int t; ts >> t;) u.tokens.push_back(t);
    std::istringstream as(aligns);
    std::string triple;
    while (std::getline(as, triple, ',')) {
      AlignEntry a;
      if (std::sscanf(triple.c_str(), "%d:%d:%d", &a.token_id, &a.start_frame,
                      &a.end_frame) != 3)
        throw std::runtime_error("manifest: bad alignment triple: " + triple);
      u.ref_alignment.push_back(a);
    }
    if (u.tokens.size() != u.ref_alignment.size())
      throw std::runtime_error("manifest: token/alignment count mismatch for " +
                               id);
    if (ds.dim >= 0 && u.features.cols != ds.dim)
      throw std::runtime_error("manifest: feature dim mismatch for " + id);
    // Token spans are contiguous; silence padding may surround them.
    int expect = u.ref_alignment.empty() ? 0 : u.ref_alignment[0].start_frame;
    if (expect < 0)
      throw std::runtime_error("manifest: inconsistent alignment for " + id);
    for (std::size_t i = 0; i < u.ref_alignment.size(); ++i) {
      const auto& a = u.ref_alignment[i];
      if (a.token_id != u.tokens[i] || a.start_frame != expect ||
          a.end_frame <= a.start_frame)
        throw std::runtime_error("manifest: inconsistent alignment for " + id);
      expect = a.end_frame;
    }
    if (expect > u.features.rows)
      throw std::runtime_error("manifest: alignment exceeds features of " + id);
    ds.utterances.push_back(std::move(u));
  }
  if (ds.vocab.size < 2 || ds.dim < 1)
    throw std::runtime_error("manifest: missing vocab_size/dim metadata");
  return ds;
}

}  // namespace maskstream::data
