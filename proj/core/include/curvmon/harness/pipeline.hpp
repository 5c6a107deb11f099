#pragma once

#include "curvmon/harness/run.hpp"
#include "curvmon/monitor/calibration.hpp"
#include "curvmon/monitor/cusum.hpp"
#include "curvmon/monitor/stats.hpp"

#include <nlohmann/json.hpp>

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace curvmon::harness {

/// Copy of `base` with every seed offset by `replicate`.
RunConfig derive_config(const RunConfig& base, std::string run_id, double eta, std::uint64_t replicate);

/// `per_eta` replicates for each eta, replicate numbers starting at `first_replicate`
/// and shared across arms so that arms are paired by seed.
std::vector<RunConfig> arm_configs(const RunConfig& base, const std::vector<double>& etas, std::size_t per_eta,
                                   std::uint64_t first_replicate = 1000);

struct Phase1Options {
  std::size_t ensemble_size = 8;
  double arl0 = 1000.0;
  double k = 0.5;
  monitor::CalibrationOptions calibration;
  LayerSelector layer;
  std::optional<std::pair<int, int>> window;  // Cohen's d epochs; middle third by default
  unsigned threads = 0;
};

struct Phase1Result {
  monitor::Baseline baseline;
  monitor::Calibration calibration;
  LayerSelector layer;
  std::pair<int, int> window{0, 0};
  std::vector<std::string> excluded;  // "run_id: reason"
  std::vector<std::string> layer_names;
  std::vector<std::vector<double>> clean_window_means;  // [layer][run]
  monitor::Autocorrelation residual_autocorrelation;
};

/// Baseline, leave-one-out threshold and clean window means from finished
/// clean runs. Failed runs are dropped with a note while at least three remain.
Phase1Result calibrate_from_runs(const std::vector<RunRecord>& runs, const Phase1Options& options);

/// Trains `ensemble_size` clean replicates of `base` under root/runs and calibrates on them.
Phase1Result phase1_calibrate(const RunConfig& base, const Phase1Options& options, const std::filesystem::path& root);

/// baseline.json (grid, mu0, sigma0, ...), calibration.json and phase1.json.
void save_phase1(const Phase1Result& p, const std::filesystem::path& dir);
Phase1Result load_phase1(const std::filesystem::path& dir);

struct DetectionRow {
  std::string run_id;
  double eta = 0.0;
  std::uint64_t seed = 0;
  bool failed = false;
  std::string failure;
  monitor::Detection detection;
};

struct ArmSummary {
  double eta = 0.0;
  std::size_t runs = 0;  // completed runs
  std::size_t alarmed = 0;
  double alert_rate = 0.0;
  monitor::Interval alert_ci;
  std::optional<double> epoch_mean;  // over alarmed runs only
  std::optional<double> epoch_std;
  std::optional<double> expected_false_alarm;  // control arm: 1 - exp(-T / ARL0)
  std::optional<bool> false_alarm_consistent;  // expected value inside the Wilson interval
  std::vector<monitor::EffectSize> effects;     // per layer, clean versus this arm
};

struct DetectionTable {
  double k = 0.0;
  double h = 0.0;
  double arl0 = 0.0;
  std::string layer;
  std::size_t horizon = 0;  // snapshots per run
  std::pair<int, int> window{0, 0};
  std::vector<DetectionRow> rows;
  std::vector<ArmSummary> arms;  // ascending eta
};

DetectionTable phase2_detect(const Phase1Result& phase1, const std::vector<RunRecord>& runs,
                             const monitor::BootstrapSpec& bootstrap = {});

struct SweepGrid {
  RunConfig base;
  std::size_t ensemble_size = 8;
  std::vector<double> etas{0.0, 0.25, 0.4, 0.6};
  std::size_t seeds_per_eta = 10;
  std::vector<double> ks{0.25, 0.5, 1.0};
  std::vector<double> arl0s{500.0, 1000.0, 2000.0};
  LayerSelector layer;
  monitor::CalibrationOptions calibration;
  std::optional<std::filesystem::path> out;
  unsigned threads = 0;
};

SweepGrid sweep_grid_from_json(const nlohmann::json& j);

struct SweepCell {
  double k = 0.0;
  double arl0 = 0.0;
  double h = 0.0;
  double arl0_achieved = 0.0;
  DetectionTable table;
};

struct SweepReport {
  std::vector<SweepCell> cells;  // k-major
};

/// Trains the clean ensemble and the noisy arms once, then recalibrates and
/// re-detects for every (k, ARL0) cell on the same runs.
SweepReport sensitivity_sweep(const SweepGrid& grid);

/// Loads every run directory matching a glob of the form dir/prefix*suffix.
std::vector<RunRecord> load_runs(const std::string& pattern);

nlohmann::json to_json(const Phase1Result& p);
nlohmann::json to_json(const DetectionTable& t);
nlohmann::json to_json(const SweepReport& r);

}  // namespace curvmon::harness
