#pragma once

#include "curvmon/trace/hutchinson.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <iosfwd>
#include <vector>

namespace curvmon::trace {

/// One JSON object per (step, layer):
///   {run_id, step, epoch, layer, layer_name, trace_est, probe_vals[], K, seed,
///    eta, loss, batch_id}
std::vector<nlohmann::json> to_records(const TraceSnapshot& snapshot);

/// Writes every record of the snapshot as newline-terminated JSON lines.
void write_jsonl(std::ostream& out, const TraceSnapshot& snapshot);
/// Appends the snapshot in a single write and flushes it.
void append_jsonl(const std::filesystem::path& path, const TraceSnapshot& snapshot);

struct LoadedSnapshots {
  std::vector<TraceSnapshot> snapshots;
  bool truncated_tail = false;  // a final partial line was ignored
};

/// Consecutive records sharing (run_id, step) form one snapshot. A final line
/// without its newline is treated as an interrupted write and skipped; any
/// other malformed line is a Parse error naming the line.
LoadedSnapshots read_jsonl(std::istream& in);
LoadedSnapshots load_jsonl(const std::filesystem::path& path);

}  // namespace curvmon::trace
