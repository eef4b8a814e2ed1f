#pragma once

#include "qbi/experiment.hpp"

#include <ostream>
#include <string>

namespace qbi {

// aggregate.csv: `iter` then `<column>_median,<column>_q25,<column>_q75` per column.
void write_aggregate(std::ostream& out, const Aggregate& aggregate);

// One JSON object per line: seed, status, final moments, evidence, trace.
void write_runs_jsonl(std::ostream& out, const RunReport& report);
RunReport read_runs_jsonl(std::istream& in);

// `name = <mean> ± <std>` per parameter plus run counts and batch metrics.
std::string summary_text(const RunReport& report);

// Writes aggregate.csv, runs.jsonl, summary.txt and per-run trace and
// ensemble CSVs into `dir` (created if missing).
void write_report(const RunReport& report, const std::string& dir);

// Re-reads runs.jsonl from `dir` and recomputes the aggregates.
RunReport load_report(const std::string& dir);

}  // namespace qbi
