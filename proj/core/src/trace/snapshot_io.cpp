#include "curvmon/trace/snapshot_io.hpp"

#include "curvmon/error.hpp"

#include <fstream>
#include <sstream>
#include <string>

namespace curvmon::trace {

std::vector<nlohmann::json> to_records(const TraceSnapshot& s) {
  std::vector<nlohmann::json> out;
  for (std::size_t l = 0; l < s.estimates.size(); ++l) {
    nlohmann::json r;
    r["run_id"] = s.meta.run_id;
    r["step"] = s.meta.step;
    r["epoch"] = s.meta.epoch;
    r["layer"] = l;
    r["layer_name"] = l < s.layers.size() ? s.layers[l] : "";
    r["trace_est"] = s.estimates[l];
    r["probe_vals"] = s.probe_values[l];
    r["K"] = s.K;
    r["seed"] = s.seed;
    r["eta"] = s.meta.eta;
    r["loss"] = s.loss;
    r["batch_id"] = s.meta.batch_id;
    out.push_back(std::move(r));
  }
  return out;
}

void write_jsonl(std::ostream& out, const TraceSnapshot& snapshot) {
  for (const auto& r : to_records(snapshot)) out << r.dump() << '\n';
}

void append_jsonl(const std::filesystem::path& path, const TraceSnapshot& snapshot) {
  std::ostringstream buf;
  write_jsonl(buf, snapshot);
  std::ofstream out(path, std::ios::app | std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot append to " + path.string());
  const std::string text = buf.str();
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.flush();
  if (!out) throw Error(ErrorCode::Io, "short write to " + path.string());
}

LoadedSnapshots read_jsonl(std::istream& in) {
  LoadedSnapshots out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const bool complete = !in.eof();
    if (line.empty()) continue;
    nlohmann::json r;
    try {
      r = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      if (!complete) {
        out.truncated_tail = true;
        break;
      }
      throw Error(ErrorCode::Parse, "snapshot line " + std::to_string(line_no) + ": " + e.what());
    }
    try {
      const auto run_id = r.at("run_id").get<std::string>();
      const auto step = r.at("step").get<std::uint64_t>();
      if (out.snapshots.empty() || out.snapshots.back().meta.run_id != run_id ||
          out.snapshots.back().meta.step != step) {
        TraceSnapshot s;
        s.meta.run_id = run_id;
        s.meta.step = step;
        s.meta.epoch = r.at("epoch").get<int>();
        s.meta.eta = r.at("eta").get<double>();
        s.meta.batch_id = r.value("batch_id", std::uint64_t{0});
        s.K = r.at("K").get<std::size_t>();
        s.seed = r.at("seed").get<std::uint64_t>();
        s.loss = r.at("loss").get<double>();
        out.snapshots.push_back(std::move(s));
      }
      auto& s = out.snapshots.back();
      const auto layer = r.at("layer").get<std::size_t>();
      if (layer != s.estimates.size()) {
        throw Error(ErrorCode::Parse, "snapshot line " + std::to_string(line_no) + ": layer " +
                                          std::to_string(layer) + " out of order");
      }
      s.layers.push_back(r.value("layer_name", std::string{}));
      s.estimates.push_back(r.at("trace_est").get<double>());
      s.probe_values.push_back(r.at("probe_vals").get<std::vector<double>>());
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::Parse, "snapshot line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

LoadedSnapshots load_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot read " + path.string());
  return read_jsonl(in);
}

}  // namespace curvmon::trace
