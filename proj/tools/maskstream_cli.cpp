// Experiment driver: datagen -> pretrain -> train -> decode -> analyze
// -> report. Every run writes its resolved config next to its outputs;
// checkpoints and tables are written atomically.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "maskstream/analysis.hpp"
#include "maskstream/cbs_decoder.hpp"
#include "maskstream/checkpoint.hpp"
#include "maskstream/config.hpp"
#include "maskstream/ctc.hpp"
#include "maskstream/data.hpp"
#include "maskstream/maskctc.hpp"
#include "maskstream/pipeline.hpp"
#include "maskstream/streaming_encoder.hpp"
#include "maskstream/tape.hpp"
#include "maskstream/transducer.hpp"

namespace fs = std::filesystem;
using namespace maskstream;
using pipeline::Arch;
using pipeline::ExperimentConfig;

namespace {

ExperimentConfig resolve_config(const std::string& config_path,
                                const std::vector<std::string>& overrides) {
  ExperimentConfig cfg;
  if (!config_path.empty()) cfg = pipeline::load_config(config_path);
  for (const std::string& kv : overrides) {
    auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("override must be key=value: " + kv);
    pipeline::apply_override(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

void write_atomic(const std::string& path, const std::string& body) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp);
    out << body;
    if (!out.flush()) throw std::runtime_error("write failed: " + tmp);
  }
  fs::rename(tmp, path);
}

// Snapshot selection uses the tail of the training set, never test data.
std::pair<data::Dataset, data::Dataset> split_valid(const data::Dataset& ds) {
  data::Dataset train = ds, valid = ds;
  std::size_t n_valid =
      std::max<std::size_t>(1, ds.utterances.size() / 10);
  if (n_valid >= ds.utterances.size())
    throw std::runtime_error("dataset too small for a validation split");
  train.utterances.assign(ds.utterances.begin(),
                          ds.utterances.end() - long(n_valid));
  valid.utterances.assign(ds.utterances.end() - long(n_valid),
                          ds.utterances.end());
  return {train, valid};
}

int run_datagen(const ExperimentConfig& cfg, const std::string& out_dir) {
  data::Vocabulary vocab = data::build_vocab(cfg.vocab_size);
  data::GenParams gp;
  gp.tokens_min = cfg.tokens_min;
  gp.tokens_max = cfg.tokens_max;
  gp.synth = {cfg.dur_min, cfg.dur_max, cfg.noise_sigma, cfg.edge_silence};
  data::ProtoTable protos =
      data::make_proto_table(vocab, cfg.dim, Rng::mix(cfg.seed, 0), cfg.proto_scale);
  gp.n_utterances = cfg.train_utts;
  data::Dataset train = data::generate_dataset(
      vocab, cfg.dim, gp, Rng::mix(cfg.seed, 1), "tr", &protos);
  gp.n_utterances = cfg.test_utts;
  data::Dataset test = data::generate_dataset(
      vocab, cfg.dim, gp, Rng::mix(cfg.seed, 2), "te", &protos);
  data::write_manifest(train, (fs::path(out_dir) / "train").string());
  data::write_manifest(test, (fs::path(out_dir) / "test").string());
  pipeline::write_resolved_config(cfg,
                                  (fs::path(out_dir) / "config.resolved").string());
  std::cout << "wrote " << train.utterances.size() << " train / "
            << test.utterances.size() << " test utterances to " << out_dir
            << "\n";
  return 0;
}

int run_pretrain(const ExperimentConfig& cfg, const std::string& data_dir,
                 const std::string& out_dir) {
  data::Dataset full =
      data::read_manifest((fs::path(data_dir) / "train" / "manifest.txt").string());
  auto [train, valid] = split_valid(full);
  pipeline::TrainResult res = pipeline::train_maskctc(cfg, train, &valid);
  fs::create_directories(out_dir);
  pipeline::save_checkpoint(res.final,
                            (fs::path(out_dir) / "stage1.ckpt").string());
  pipeline::write_resolved_config(cfg,
                                  (fs::path(out_dir) / "config.resolved").string());
  std::cout << "stage 1 final train loss " << res.loss_history.back() << "\n";
  return 0;
}

int run_train(const ExperimentConfig& cfg, const std::string& data_dir,
              const std::string& init_path, const std::string& out_dir) {
  data::Dataset full =
      data::read_manifest((fs::path(data_dir) / "train" / "manifest.txt").string());
  auto [train, valid] = split_valid(full);
  pipeline::TrainResult res;
  if (init_path.empty()) {
    res = pipeline::train_streaming(cfg, train, nullptr, &valid);
  } else {
    pipeline::Checkpoint init = pipeline::load_checkpoint(init_path);
    res = pipeline::train_streaming(cfg, train, &init, &valid);
  }
  res.final.metadata["init"] = init_path.empty() ? "random" : "mask-ctc";
  fs::create_directories(out_dir);
  pipeline::save_checkpoint(res.final,
                            (fs::path(out_dir) / "model.ckpt").string());
  pipeline::write_resolved_config(cfg,
                                  (fs::path(out_dir) / "config.resolved").string());
  std::cout << "stage 2 final train loss " << res.loss_history.back() << "\n";
  return 0;
}

std::string join_ints(const std::vector<int>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? " " : "") << v[i];
  return os.str();
}

// One decoded utterance: hypothesis tokens plus per-token spike/emission
// frames (-1 when no frame is available for a token).
struct DecodedUtt {
  std::string id;
  data::TokenSequence tokens;
  std::vector<int> frames;
};

DecodedUtt decode_one(nn::ParameterSet& params, const ExperimentConfig& cfg,
                      const data::Vocabulary& vocab,
                      const data::Utterance& utt) {
  const nn::ModelConfig mc = pipeline::model_config(cfg);
  const streaming::AttentionPolicy pol = cfg.attention_policy();
  DecodedUtt out;
  out.id = utt.id;
  switch (cfg.arch) {
    case Arch::MaskCtc: {
      Tape tape;
      nn::Binding bind(tape, params);
      Tape::Id enc = nn::encoder_forward(bind, mc, utt.features, pol);
      const Tensor& grid = tape.val(nn::ctc_head_forward(bind, enc));
      out.tokens = ctc::ctc_greedy(grid);
      out.frames = ctc::ctc_spikes(grid, out.tokens);
      break;
    }
    case Arch::Transducer: {
      Tape tape;
      nn::Binding bind(tape, params);
      Tensor enc = tape.val(nn::encoder_forward(bind, mc, utt.features, pol));
      transducer::GreedyResult greedy =
          transducer::transducer_greedy(params, mc, enc, cfg.max_symbols);
      out.tokens = cfg.beam <= 1
                       ? greedy.tokens
                       : transducer::transducer_beam(params, mc, enc, cfg.beam,
                                                     cfg.max_symbols);
      if (out.tokens == greedy.tokens) {
        for (const auto& e : greedy.emissions) out.frames.push_back(e.frame);
      } else {
        out.frames.assign(out.tokens.size(), -1);
      }
      break;
    }
    case Arch::Cbs: {
      cbs::CbsResult res = cbs::cbs_beam_search(params, mc, vocab,
                                                utt.features, pol.block,
                                                cfg.beam);
      out.tokens = res.tokens;
      out.frames.assign(out.tokens.size(), -1);
      // Spike frames from CTC forced alignment of the hypothesis.
      if (!out.tokens.empty() &&
          utt.features.rows >= ctc::min_frames(out.tokens)) {
        Tape tape;
        nn::Binding bind(tape, params);
        Tape::Id enc =
            streaming::block_encoder_forward(bind, mc, utt.features, pol.block);
        const Tensor& grid = tape.val(nn::ctc_head_forward(bind, enc));
        data::Alignment align = ctc::ctc_viterbi_align(grid, out.tokens);
        for (std::size_t i = 0; i < align.size(); ++i)
          out.frames[i] = align[i].spike_frame;
      }
      break;
    }
  }
  return out;
}

int run_decode(const ExperimentConfig& cfg, const std::string& data_dir,
               const std::string& model_path, const std::string& out_dir) {
  data::Dataset test =
      data::read_manifest((fs::path(data_dir) / "test" / "manifest.txt").string());
  pipeline::Checkpoint ck = pipeline::load_checkpoint(model_path);
  std::ostringstream table;
  table << "utt_id\thyp_tokens\tspike_frames\n";
  for (const auto& utt : test.utterances) {
    DecodedUtt d = decode_one(ck.params, cfg, test.vocab, utt);
    table << d.id << '\t' << join_ints(d.tokens) << '\t' << join_ints(d.frames)
          << '\n';
  }
  fs::create_directories(out_dir);
  write_atomic((fs::path(out_dir) / "decode.tsv").string(), table.str());
  pipeline::write_resolved_config(cfg,
                                  (fs::path(out_dir) / "config.resolved").string());
  std::string init = ck.metadata.count("init") ? ck.metadata.at("init")
                                               : "random";
  write_atomic((fs::path(out_dir) / "decode_meta.txt").string(),
               "init=" + init + "\n");
  std::cout << "decoded " << test.utterances.size() << " utterances\n";
  return 0;
}

std::vector<int> parse_ints(const std::string& s) {
  std::vector<int> out;
  std::istringstream is(s);
  int v;
  while (is >> v) out.push_back(v);
  return out;
}

int run_analyze(const ExperimentConfig& cfg, const std::string& data_dir,
                const std::string& decode_dir, const std::string& model_name,
                const std::string& out_dir) {
  data::Dataset test =
      data::read_manifest((fs::path(data_dir) / "test" / "manifest.txt").string());
  std::ifstream in((fs::path(decode_dir) / "decode.tsv").string());
  if (!in) throw std::runtime_error("cannot read decode.tsv in " + decode_dir);
  std::string init = "random";
  {
    std::ifstream meta((fs::path(decode_dir) / "decode_meta.txt").string());
    std::string line;
    while (meta && std::getline(meta, line))
      if (line.rfind("init=", 0) == 0) init = line.substr(5);
  }
  std::string line;
  std::getline(in, line);  // header
  std::map<std::string, DecodedUtt> decoded;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    DecodedUtt d;
    std::string toks, frames;
    std::getline(ls, d.id, '\t');
    std::getline(ls, toks, '\t');
    std::getline(ls, frames, '\t');
    d.tokens = parse_ints(toks);
    d.frames = parse_ints(frames);
    decoded[d.id] = d;
  }

  long errors = 0, ref_len = 0;
  std::vector<analysis::DelayStats> delays;
  std::vector<analysis::AlignmentDumpRow> dump;
  for (const auto& utt : test.utterances) {
    auto it = decoded.find(utt.id);
    if (it == decoded.end())
      throw std::runtime_error("decode.tsv is missing utterance " + utt.id);
    const DecodedUtt& d = it->second;
    analysis::EditResult ed = analysis::edit_distance(utt.tokens, d.tokens);
    errors += ed.distance;
    ref_len += long(utt.tokens.size());
    delays.push_back(
        analysis::spike_delay(d.frames, utt.ref_alignment, ed.ops));
    for (const auto& op : ed.ops) {
      if (op.hyp_index < 0) continue;
      analysis::AlignmentDumpRow row;
      row.utt_id = utt.id;
      row.token = d.tokens[std::size_t(op.hyp_index)];
      row.spike_frame = op.hyp_index < int(d.frames.size())
                            ? d.frames[std::size_t(op.hyp_index)]
                            : -1;
      if (op.ref_index >= 0) {
        row.ref_start = utt.ref_alignment[std::size_t(op.ref_index)].start_frame;
        row.ref_end = utt.ref_alignment[std::size_t(op.ref_index)].end_frame;
      }
      dump.push_back(row);
    }
  }
  analysis::DelayStats pooled = analysis::pool_delays(delays);
  analysis::ResultRow row;
  row.model = model_name;
  row.policy = cfg.policy;
  row.latency_ms = streaming::latency_ms(cfg.attention_policy());
  row.init = init;
  row.error_rate = ref_len ? 100.0 * double(errors) / double(ref_len) : 0.0;
  row.mean_delay_ms = pooled.mean_ms;
  row.seed = cfg.seed;
  analysis::emit_report({row}, dump, out_dir);
  std::cout << "TER " << row.error_rate << "% mean delay " << pooled.mean_ms
            << " ms (match rate " << pooled.match_rate << ")\n";
  return 0;
}

int run_report(const std::vector<std::string>& result_dirs,
               const std::string& out_dir) {
  std::vector<analysis::ResultRow> rows;
  for (const std::string& dir : result_dirs) {
    auto part =
        analysis::parse_results_table((fs::path(dir) / "results.tsv").string());
    rows.insert(rows.end(), part.begin(), part.end());
  }
  analysis::emit_report(rows, {}, out_dir);
  std::cout << "merged " << rows.size() << " rows into " << out_dir
            << "/results.tsv\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Streaming ASR pre-training experiments"};
  app.require_subcommand(1);

  std::string config_path, out_dir, data_dir, init_path, model_path;
  std::string model_name = "run";
  std::vector<std::string> overrides, result_dirs;

  auto add_common = [&](CLI::App* sub, bool needs_out = true) {
    sub->add_option("--config", config_path, "config file (key = value)");
    sub->add_option("--set", overrides, "override, e.g. train.lr=0.01");
    if (needs_out)
      sub->add_option("--out", out_dir, "output directory")->required();
  };

  CLI::App* datagen = app.add_subcommand("datagen", "generate a corpus");
  add_common(datagen);

  CLI::App* pretrain = app.add_subcommand("pretrain", "stage 1 training");
  add_common(pretrain);
  pretrain->add_option("--data", data_dir, "datagen output dir")->required();

  CLI::App* train = app.add_subcommand("train", "stage 2 training");
  add_common(train);
  train->add_option("--data", data_dir, "datagen output dir")->required();
  train->add_option("--init", init_path, "stage 1 checkpoint to transplant");

  CLI::App* decode = app.add_subcommand("decode", "decode the test set");
  add_common(decode);
  decode->add_option("--data", data_dir, "datagen output dir")->required();
  decode->add_option("--model", model_path, "checkpoint")->required();

  CLI::App* analyze = app.add_subcommand("analyze", "score a decode run");
  add_common(analyze);
  analyze->add_option("--data", data_dir, "datagen output dir")->required();
  analyze->add_option("--decode", model_path, "decode output dir")->required();
  analyze->add_option("--name", model_name, "row label for the results table");

  CLI::App* report = app.add_subcommand("report", "merge results tables");
  report->add_option("--in", result_dirs, "analyze output dirs")->required();
  report->add_option("--out", out_dir, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (app.got_subcommand(report)) return run_report(result_dirs, out_dir);
    ExperimentConfig cfg = resolve_config(config_path, overrides);
    if (app.got_subcommand(datagen)) return run_datagen(cfg, out_dir);
    if (app.got_subcommand(pretrain)) return run_pretrain(cfg, data_dir, out_dir);
    if (app.got_subcommand(train))
      return run_train(cfg, data_dir, init_path, out_dir);
    if (app.got_subcommand(decode))
      return run_decode(cfg, data_dir, model_path, out_dir);
    if (app.got_subcommand(analyze))
      return run_analyze(cfg, data_dir, model_path, model_name, out_dir);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
