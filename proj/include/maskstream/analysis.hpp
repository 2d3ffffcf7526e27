#pragma once
// Error-rate and spike-delay metrics against exact reference alignments,
// plus the results-table / alignment-dump report writer.

#include <string>
#include <vector>

#include "maskstream/data.hpp"

namespace maskstream::analysis {

using data::TokenSequence;

enum class EditOp { Match, Substitute, Insert, Delete };

struct AlignedOp {
  EditOp op;
  int ref_index = -1;  // -1 for insertions
  int hyp_index = -1;  // -1 for deletions
};

struct EditResult {
  int distance = 0;
  std::vector<AlignedOp> ops;
};

// Levenshtein with unit costs; ops pair matched/substituted tokens and
// record insertions/deletions. Prefers match/substitute over ins/del on
// ties so the alignment is maximal.
EditResult edit_distance(const TokenSequence& ref, const TokenSequence& hyp);

// distance / ref length, in percent; empty ref counts each insertion as
// a full error against length 1.
double token_error_rate(const TokenSequence& ref, const TokenSequence& hyp);

struct DelayStats {
  int matched = 0;       // match + substitute pairs with a spike
  int ref_tokens = 0;
  double match_rate = 0.0;
  double mean_ms = 0.0;    // 0 when matched == 0
  double median_ms = 0.0;
  bool empty = true;       // matched == 0
};

// Per matched pair: delay = (hyp spike/emission frame - ref end_frame)
// * frame_ms, with end_frame the stored exclusive span end, so a spike
// on the first frame after the span scores 0 ms. Insertions and
// deletions are excluded; match_rate makes the exclusions visible.
DelayStats spike_delay(const std::vector<int>& hyp_spike_frames,
                       const data::Alignment& ref_align,
                       const std::vector<AlignedOp>& ops, int frame_ms = 40);

// Corpus-level pooling of per-utterance stats (weighted by match count).
DelayStats pool_delays(const std::vector<DelayStats>& per_utt);

struct ResultRow {
  std::string model;    // run identifier
  std::string policy;   // "full" | "chunk:c" | "block:l:c:r"
  int latency_ms = -1;  // -1 for full attention
  std::string init;     // "random" | "mask-ctc"
  double error_rate = 0.0;  // percent
  double mean_delay_ms = 0.0;
  std::uint64_t seed = 0;
};

// One per decoded token; the plot-data record behind the delay figures.
struct AlignmentDumpRow {
  std::string utt_id;
  int token = 0;
  int spike_frame = -1;
  double posterior = 0.0;  // exp of the spike-frame log posterior
  int ref_start = -1;      // -1 for insertions
  int ref_end = -1;
};

// Writes results.tsv (header + one row each), alignments.tsv, and
// run_metadata.txt recording the measurement conventions. Throws on
// latency/policy mismatch or unwritable paths.
void emit_report(const std::vector<ResultRow>& rows,
                 const std::vector<AlignmentDumpRow>& dump,
                 const std::string& out_dir);

// Parses a results.tsv written by emit_report (roundtrip check).
std::vector<ResultRow> parse_results_table(const std::string& path);

}  // namespace maskstream::analysis
