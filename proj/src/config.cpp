#include "maskstream/config.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

namespace maskstream::pipeline {

Arch parse_arch(const std::string& s) {
  if (s == "maskctc") return Arch::MaskCtc;
  if (s == "transducer") return Arch::Transducer;
  if (s == "cbs") return Arch::Cbs;
  throw std::invalid_argument("unknown arch: " + s);
}

std::string arch_name(Arch a) {
  switch (a) {
    case Arch::MaskCtc: return "maskctc";
    case Arch::Transducer: return "transducer";
    case Arch::Cbs: return "cbs";
  }
  return "maskctc";
}

namespace {

using Setter = std::function<void(ExperimentConfig&, const std::string&)>;
using Getter = std::function<std::string(const ExperimentConfig&)>;

struct Field {
  Setter set;
  Getter get;
};

int to_int(const std::string& v) {
  std::size_t pos = 0;
  int x = std::stoi(v, &pos);
  if (pos != v.size()) throw std::invalid_argument("not an integer: " + v);
  return x;
}

double to_double(const std::string& v) {
  std::size_t pos = 0;
  double x = std::stod(v, &pos);
  if (pos != v.size()) throw std::invalid_argument("not a number: " + v);
  return x;
}

bool to_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("not a bool: " + v);
}

std::string fmt(double x) {
  std::ostringstream os;
  os << x;
  return os.str();
}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> f = {
      {"data.vocab_size",
       {[](auto& c, const auto& v) { c.vocab_size = to_int(v); },
        [](const auto& c) { return std::to_string(c.vocab_size); }}},
      {"data.dim",
       {[](auto& c, const auto& v) { c.dim = to_int(v); },
        [](const auto& c) { return std::to_string(c.dim); }}},
      {"data.dur_min",
       {[](auto& c, const auto& v) { c.dur_min = to_int(v); },
        [](const auto& c) { return std::to_string(c.dur_min); }}},
      {"data.dur_max",
       {[](auto& c, const auto& v) { c.dur_max = to_int(v); },
        [](const auto& c) { return std::to_string(c.dur_max); }}},
      {"data.noise_sigma",
       {[](auto& c, const auto& v) { c.noise_sigma = to_double(v); },
        [](const auto& c) { return fmt(c.noise_sigma); }}},
      {"data.proto_scale",
       {[](auto& c, const auto& v) { c.proto_scale = to_double(v); },
        [](const auto& c) { return fmt(c.proto_scale); }}},
      {"data.edge_silence",
       {[](auto& c, const auto& v) { c.edge_silence = to_int(v); },
        [](const auto& c) { return std::to_string(c.edge_silence); }}},
      {"data.tokens_min",
       {[](auto& c, const auto& v) { c.tokens_min = to_int(v); },
        [](const auto& c) { return std::to_string(c.tokens_min); }}},
      {"data.tokens_max",
       {[](auto& c, const auto& v) { c.tokens_max = to_int(v); },
        [](const auto& c) { return std::to_string(c.tokens_max); }}},
      {"data.train_utts",
       {[](auto& c, const auto& v) { c.train_utts = to_int(v); },
        [](const auto& c) { return std::to_string(c.train_utts); }}},
      {"data.test_utts",
       {[](auto& c, const auto& v) { c.test_utts = to_int(v); },
        [](const auto& c) { return std::to_string(c.test_utts); }}},
      {"data.augment.time_masks",
       {[](auto& c, const auto& v) { c.augment_time_masks = to_int(v); },
        [](const auto& c) { return std::to_string(c.augment_time_masks); }}},
      {"data.augment.freq_masks",
       {[](auto& c, const auto& v) { c.augment_freq_masks = to_int(v); },
        [](const auto& c) { return std::to_string(c.augment_freq_masks); }}},
      {"data.augment.max_width",
       {[](auto& c, const auto& v) { c.augment_max_width = to_int(v); },
        [](const auto& c) { return std::to_string(c.augment_max_width); }}},
      {"model.d_model",
       {[](auto& c, const auto& v) { c.d_model = to_int(v); },
        [](const auto& c) { return std::to_string(c.d_model); }}},
      {"model.heads",
       {[](auto& c, const auto& v) { c.heads = to_int(v); },
        [](const auto& c) { return std::to_string(c.heads); }}},
      {"model.ff",
       {[](auto& c, const auto& v) { c.ff = to_int(v); },
        [](const auto& c) { return std::to_string(c.ff); }}},
      {"model.enc_layers",
       {[](auto& c, const auto& v) { c.enc_layers = to_int(v); },
        [](const auto& c) { return std::to_string(c.enc_layers); }}},
      {"model.dec_layers",
       {[](auto& c, const auto& v) { c.dec_layers = to_int(v); },
        [](const auto& c) { return std::to_string(c.dec_layers); }}},
      {"model.joint_dim",
       {[](auto& c, const auto& v) { c.joint_dim = to_int(v); },
        [](const auto& c) { return std::to_string(c.joint_dim); }}},
      {"model.policy",
       {[](auto& c, const auto& v) { c.policy = v; },
        [](const auto& c) { return c.policy; }}},
      {"train.arch",
       {[](auto& c, const auto& v) { c.arch = parse_arch(v); },
        [](const auto& c) { return arch_name(c.arch); }}},
      {"train.epochs",
       {[](auto& c, const auto& v) { c.epochs = to_int(v); },
        [](const auto& c) { return std::to_string(c.epochs); }}},
      {"train.batch",
       {[](auto& c, const auto& v) { c.batch = to_int(v); },
        [](const auto& c) { return std::to_string(c.batch); }}},
      {"train.lr",
       {[](auto& c, const auto& v) { c.lr = to_double(v); },
        [](const auto& c) { return fmt(c.lr); }}},
      {"train.warmup_steps",
       {[](auto& c, const auto& v) { c.warmup_steps = to_int(v); },
        [](const auto& c) { return std::to_string(c.warmup_steps); }}},
      {"train.alpha",
       {[](auto& c, const auto& v) { c.alpha = to_double(v); },
        [](const auto& c) { return fmt(c.alpha); }}},
      {"train.cbs_ctc_weight",
       {[](auto& c, const auto& v) { c.cbs_ctc_weight = to_double(v); },
        [](const auto& c) { return fmt(c.cbs_ctc_weight); }}},
      {"train.keep_best",
       {[](auto& c, const auto& v) { c.keep_best = to_int(v); },
        [](const auto& c) { return std::to_string(c.keep_best); }}},
      {"train.freeze_transplanted",
       {[](auto& c, const auto& v) { c.freeze_transplanted = to_bool(v); },
        [](const auto& c) {
          return std::string(c.freeze_transplanted ? "true" : "false");
        }}},
      {"train.seed",
       {[](auto& c, const auto& v) { c.seed = std::stoull(v); },
        [](const auto& c) { return std::to_string(c.seed); }}},
      {"decode.beam",
       {[](auto& c, const auto& v) { c.beam = to_int(v); },
        [](const auto& c) { return std::to_string(c.beam); }}},
      {"decode.max_symbols",
       {[](auto& c, const auto& v) { c.max_symbols = to_int(v); },
        [](const auto& c) { return std::to_string(c.max_symbols); }}},
  };
  return f;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (vocab_size < 2) throw std::invalid_argument("data.vocab_size >= 2");
  if (dim < 1) throw std::invalid_argument("data.dim >= 1");
  if (dur_min < 1 || dur_max < dur_min)
    throw std::invalid_argument("bad data.dur_min/dur_max");
  if (edge_silence < 0) throw std::invalid_argument("bad data.edge_silence");
  if (proto_scale <= 0.0) throw std::invalid_argument("bad data.proto_scale");
  if (tokens_min < 1 || tokens_max < tokens_min)
    throw std::invalid_argument("bad data.tokens_min/tokens_max");
  if (d_model % heads != 0)
    throw std::invalid_argument("model.d_model must be divisible by heads");
  if (alpha < 0.0 || alpha > 1.0)
    throw std::invalid_argument("train.alpha must be in [0,1]");
  if (cbs_ctc_weight < 0.0 || cbs_ctc_weight > 1.0)
    throw std::invalid_argument("train.cbs_ctc_weight must be in [0,1]");
  if (epochs < 1 || batch < 1) throw std::invalid_argument("bad train.epochs/batch");
  if (keep_best < 1) throw std::invalid_argument("train.keep_best >= 1");
  if (beam < 1) throw std::invalid_argument("decode.beam >= 1");
  if (max_symbols < 1) throw std::invalid_argument("decode.max_symbols >= 1");
  streaming::parse_policy(policy);  // throws if malformed
  if (arch == Arch::MaskCtc && policy != "full")
    throw std::invalid_argument("maskctc pre-training requires model.policy=full");
  if (arch == Arch::Transducer && policy.rfind("chunk:", 0) != 0 &&
      policy != "full")
    throw std::invalid_argument("transducer requires chunk or full policy");
  if (arch == Arch::Cbs && policy.rfind("block:", 0) != 0 && policy != "full")
    throw std::invalid_argument("cbs requires block or full policy");
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config: " + path);
  ExperimentConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument(path + ":" + std::to_string(lineno) +
                                  ": expected key = value");
    auto trim = [](std::string s) {
      auto b = s.find_first_not_of(" \t\r");
      auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    apply_override(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

void apply_override(ExperimentConfig& cfg, const std::string& key,
                    const std::string& value) {
  auto it = fields().find(key);
  if (it == fields().end())
    throw std::invalid_argument("unknown config key: " + key);
  it->second.set(cfg, value);
}

std::string serialize_config(const ExperimentConfig& cfg) {
  std::ostringstream os;
  for (const auto& [key, field] : fields())
    os << key << " = " << field.get(cfg) << "\n";
  return os.str();
}

void write_resolved_config(const ExperimentConfig& cfg,
                           const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write resolved config: " + path);
  os << serialize_config(cfg);
}

std::string config_hash(const ExperimentConfig& cfg) {
  std::string s = serialize_config(cfg);
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", (unsigned long long)h);
  return buf;
}

}  // namespace maskstream::pipeline
