#include "maskstream/analysis.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "maskstream/streaming.hpp"

namespace maskstream::analysis {

EditResult edit_distance(const TokenSequence& ref, const TokenSequence& hyp) {
  const int n = int(ref.size()), m = int(hyp.size());
  // dist[i][j]: distance between ref[:i] and hyp[:j].
  std::vector<std::vector<int>> dist(std::size_t(n + 1),
                                     std::vector<int>(std::size_t(m + 1), 0));
  for (int i = 0; i <= n; ++i) dist[std::size_t(i)][0] = i;
  for (int j = 0; j <= m; ++j) dist[0][std::size_t(j)] = j;
  for (int i = 1; i <= n; ++i)
    for (int j = 1; j <= m; ++j) {
      int sub = dist[std::size_t(i - 1)][std::size_t(j - 1)] +
                (ref[std::size_t(i - 1)] != hyp[std::size_t(j - 1)]);
      int del = dist[std::size_t(i - 1)][std::size_t(j)] + 1;
      int ins = dist[std::size_t(i)][std::size_t(j - 1)] + 1;
      dist[std::size_t(i)][std::size_t(j)] = std::min({sub, del, ins});
    }

  EditResult out;
  out.distance = dist[std::size_t(n)][std::size_t(m)];
  int i = n, j = m;
  while (i > 0 || j > 0) {
    const int cur = dist[std::size_t(i)][std::size_t(j)];
    if (i > 0 && j > 0 &&
        cur == dist[std::size_t(i - 1)][std::size_t(j - 1)] +
                   (ref[std::size_t(i - 1)] != hyp[std::size_t(j - 1)])) {
      out.ops.push_back({ref[std::size_t(i - 1)] == hyp[std::size_t(j - 1)]
                             ? EditOp::Match
                             : EditOp::Substitute,
                         i - 1, j - 1});
      --i, --j;
    } else if (i > 0 && cur == dist[std::size_t(i - 1)][std::size_t(j)] + 1) {
      out.ops.push_back({EditOp::Delete, i - 1, -1});
      --i;
    } else {
      out.ops.push_back({EditOp::Insert, -1, j - 1});
      --j;
    }
  }
  std::reverse(out.ops.begin(), out.ops.end());
  return out;
}

double token_error_rate(const TokenSequence& ref, const TokenSequence& hyp) {
  const int d = edit_distance(ref, hyp).distance;
  const double denom = std::max<std::size_t>(ref.size(), 1);
  return 100.0 * double(d) / denom;
}

DelayStats spike_delay(const std::vector<int>& hyp_spike_frames,
                       const data::Alignment& ref_align,
                       const std::vector<AlignedOp>& ops, int frame_ms) {
  DelayStats s;
  s.ref_tokens = int(ref_align.size());
  std::vector<double> delays;
  for (const auto& op : ops) {
    if (op.op != EditOp::Match && op.op != EditOp::Substitute) continue;
    if (op.ref_index < 0 || op.ref_index >= int(ref_align.size())) continue;
    if (op.hyp_index < 0 || op.hyp_index >= int(hyp_spike_frames.size()))
      continue;
    const int spike = hyp_spike_frames[std::size_t(op.hyp_index)];
    if (spike < 0) continue;
    // Baseline is the reference end frame: a spike at or before it is non-delayed.
    const int end = ref_align[std::size_t(op.ref_index)].end_frame;
    delays.push_back(double(spike - end) * frame_ms);
  }
  s.matched = int(delays.size());
  s.match_rate = s.ref_tokens ? double(s.matched) / s.ref_tokens : 0.0;
  s.empty = delays.empty();
  if (s.empty) return s;
  double sum = 0.0;
  for (double d : delays) sum += d;
  s.mean_ms = sum / double(delays.size());
  std::sort(delays.begin(), delays.end());
  const std::size_t mid = delays.size() / 2;
  s.median_ms = delays.size() % 2 ? delays[mid]
                                  : 0.5 * (delays[mid - 1] + delays[mid]);
  return s;
}

DelayStats pool_delays(const std::vector<DelayStats>& per_utt) {
  DelayStats s;
  double weighted = 0.0;
  std::vector<double> means;  // median of per-utterance means
  for (const auto& u : per_utt) {
    s.matched += u.matched;
    s.ref_tokens += u.ref_tokens;
    if (!u.empty) {
      weighted += u.mean_ms * u.matched;
      means.push_back(u.mean_ms);
    }
  }
  s.match_rate = s.ref_tokens ? double(s.matched) / s.ref_tokens : 0.0;
  s.empty = s.matched == 0;
  if (s.empty) return s;
  s.mean_ms = weighted / s.matched;
  std::sort(means.begin(), means.end());
  const std::size_t mid = means.size() / 2;
  s.median_ms =
      means.size() % 2 ? means[mid] : 0.5 * (means[mid - 1] + means[mid]);
  return s;
}

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

void check_row(const ResultRow& row) {
  streaming::AttentionPolicy pol = streaming::parse_policy(row.policy);
  const int expect = streaming::latency_ms(pol);
  if (row.latency_ms != expect)
    throw std::invalid_argument("result row '" + row.model + "': latency " +
                                std::to_string(row.latency_ms) +
                                " does not match policy " + row.policy);
  if (row.init != "random" && row.init != "mask-ctc")
    throw std::invalid_argument("result row '" + row.model +
                                "': init must be random or mask-ctc");
}

void atomic_write(const std::string& path, const std::string& body) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp);
    out << body;
    if (!out.flush()) throw std::runtime_error("write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace

void emit_report(const std::vector<ResultRow>& rows,
                 const std::vector<AlignmentDumpRow>& dump,
                 const std::string& out_dir) {
  for (const auto& r : rows) check_row(r);
  std::filesystem::create_directories(out_dir);

  std::ostringstream table;
  table << "model\tpolicy\tlatency_ms\tinit\terror_rate\tmean_delay_ms\tseed\n";
  for (const auto& r : rows)
    table << r.model << '\t' << r.policy << '\t' << r.latency_ms << '\t'
          << r.init << '\t' << fmt_double(r.error_rate) << '\t'
          << fmt_double(r.mean_delay_ms) << '\t' << r.seed << '\n';
  atomic_write(out_dir + "/results.tsv", table.str());

  std::ostringstream align;
  align << "utt_id\ttoken\tspike_frame\tposterior\tref_start\tref_end\n";
  for (const auto& d : dump)
    align << d.utt_id << '\t' << d.token << '\t' << d.spike_frame << '\t'
          << fmt_double(d.posterior) << '\t' << d.ref_start << '\t'
          << d.ref_end << '\n';
  atomic_write(out_dir + "/alignments.tsv", align.str());

  std::ostringstream meta;
  meta << "frame_ms=40\n"
       << "spike_definition=peak-posterior-within-span\n"
       << "delay_baseline=reference-token-end-frame\n"
       << "delay_exclusions=insertions-and-deletions\n"
       << "subsampling=none\n";
  atomic_write(out_dir + "/run_metadata.txt", meta.str());
}

std::vector<ResultRow> parse_results_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::string line;
  if (!std::getline(in, line))
    throw std::runtime_error("empty results table: " + path);
  std::vector<ResultRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::vector<std::string> f;
    std::string field;
    while (std::getline(ls, field, '\t')) f.push_back(field);
    if (f.size() != 7)
      throw std::runtime_error("malformed results row: " + line);
    ResultRow r;
    r.model = f[0];
    r.policy = f[1];
    r.latency_ms = std::stoi(f[2]);
    r.init = f[3];
    r.error_rate = std::stod(f[4]);
    r.mean_delay_ms = std::stod(f[5]);
    r.seed = std::stoull(f[6]);
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace maskstream::analysis
