#pragma once

#include "curvmon/ad/network.hpp"
#include "curvmon/harness/dataset.hpp"
#include "curvmon/monitor/cusum.hpp"
#include "curvmon/trace/hutchinson.hpp"
#include "curvmon/trace/probes.hpp"

#include <nlohmann/json.hpp>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace curvmon::harness {

struct OptimizerConfig {
  double momentum = 0.9;
  double learning_rate = 0.05;
  bool cosine = true;
  double weight_decay = 5e-4;  // coefficient of ||theta||^2 in the taped loss

  bool operator==(const OptimizerConfig&) const = default;
};

struct RunSeeds {
  std::uint64_t init = 0;
  std::uint64_t order = 0;
  std::uint64_t probes = 0;
  std::uint64_t noise = 0;

  bool operator==(const RunSeeds&) const = default;
};

struct RunConfig {
  std::string run_id = "run";
  std::string architecture = "mlp-small";  // mlp-small | mlp-tied
  std::optional<std::string> model_spec;   // text form; overrides the architecture preset
  DatasetSpec dataset;
  double eta = 0.0;
  OptimizerConfig optimizer;
  std::size_t batch_size = 32;
  int epochs = 30;
  std::size_t snapshot_every = 4;
  std::size_t K = 10;
  trace::ProbeKind probe_kind = trace::ProbeKind::Rademacher;
  RunSeeds seeds;

  /// Throws InvalidArgument on eta outside [0, 1), zero cadence, K or batch.
  void validate() const;
  ad::ModelSpec model() const;
  bool operator==(const RunConfig&) const = default;
};

/// Desk memorisation setup: mlp-small on 4 Gaussian blobs in 8 dimensions,
/// 192 training points, |B| = 32, 60 epochs, K = 10 every 3 steps (120 snapshots).
RunConfig desk_config();

/// Every seed must be present; nothing is drawn from the environment.
RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& c);
RunConfig load_run_config(const std::filesystem::path& path);

struct RunCounters {
  std::size_t steps = 0;
  std::size_t snapshots = 0;
  std::size_t gradient_passes = 0;
  std::size_t hvp_count = 0;
};

struct FinalMetrics {
  double train_loss = 0.0;  // without weight decay, against the (noisy) training labels
  double train_accuracy = 0.0;
  double clean_train_accuracy = 0.0;
  double test_accuracy = 0.0;
  double memorised_fraction = 0.0;  // corrupted points predicted as their noisy label
};

struct RunRecord {
  RunConfig config;
  bool failed = false;
  std::string failure;
  std::size_t steps_per_epoch = 0;
  std::size_t corrupted_labels = 0;
  std::vector<trace::TraceSnapshot> snapshots;
  RunCounters counters;
  std::optional<FinalMetrics> final_metrics;
  double wall_seconds = 0.0;  // metadata only
};

/// SGD with momentum and cosine decay. Before the update at every step t
/// with t % snapshot_every == 0, single_pass_traces runs on the current
/// mini-batch with probe stream t. With `out_dir`, config.json is written
/// up front and each snapshot is appended to snapshots.jsonl as it is taken;
/// record.json, params.json (final parameters) and metadata.json follow at the end.
RunRecord train_with_monitoring(const RunConfig& config,
                                const std::optional<std::filesystem::path>& out_dir = std::nullopt);

/// Trains independent configs on up to `threads` workers (0: one per core);
/// results keep the input order. With `root`, run i persists to root/run_id.
std::vector<RunRecord> train_all(const std::vector<RunConfig>& configs,
                                 const std::optional<std::filesystem::path>& root, unsigned threads = 0);

/// record.json content: everything except wall-clock data.
nlohmann::json to_json(const RunRecord& r);
void save_run(const RunRecord& r, const std::filesystem::path& dir);
/// Reads config.json, snapshots.jsonl and, when present, record.json.
RunRecord load_run(const std::filesystem::path& dir);

/// Which layer feeds the detector.
struct LayerSelector {
  enum class Kind { Head, Index, Sum };
  Kind kind = Kind::Head;
  std::size_t index = 0;

  std::size_t resolve(std::size_t layers) const;
  std::string to_string() const;
};
LayerSelector parse_layer_selector(const std::string& text);

monitor::Trajectory trajectory(const RunRecord& r, const LayerSelector& layer);

/// Mean over snapshots whose epoch lies in [first, last] of one layer (or the sum).
double window_mean(const RunRecord& r, const LayerSelector& layer, std::pair<int, int> window);

/// Middle third of `epochs`: [floor(E/3) + 1, ceil(2E/3)], never empty.
std::pair<int, int> middle_third(int epochs);

}  // namespace curvmon::harness
