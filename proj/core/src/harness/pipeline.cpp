#include "curvmon/harness/pipeline.hpp"

#include "curvmon/error.hpp"
#include "curvmon/harness/io.hpp"

#include <fnmatch.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

namespace curvmon::harness {

namespace fs = std::filesystem;

namespace {

std::string eta_tag(double eta) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(2);
  s << eta;
  return s.str();
}

nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

}  // namespace

RunConfig derive_config(const RunConfig& base, std::string run_id, double eta, std::uint64_t replicate) {
  RunConfig c = base;
  c.run_id = std::move(run_id);
  c.eta = eta;
  c.seeds.init += replicate;
  c.seeds.order += replicate;
  c.seeds.probes += replicate;
  c.seeds.noise += replicate;
  c.validate();
  return c;
}

std::vector<RunConfig> arm_configs(const RunConfig& base, const std::vector<double>& etas, std::size_t per_eta,
                                   std::uint64_t first_replicate) {
  std::vector<RunConfig> out;
  for (double eta : etas) {
    for (std::size_t i = 0; i < per_eta; ++i) {
      const std::uint64_t r = first_replicate + i;
      out.push_back(derive_config(base, "eta" + eta_tag(eta) + "-r" + std::to_string(r), eta, r));
    }
  }
  return out;
}

Phase1Result calibrate_from_runs(const std::vector<RunRecord>& runs, const Phase1Options& options) {
  Phase1Result p;
  p.layer = options.layer;
  std::vector<const RunRecord*> good;
  for (const auto& r : runs) {
    if (r.failed) {
      p.excluded.push_back(r.config.run_id + ": " + r.failure);
    } else if (r.config.eta != 0.0) {
      p.excluded.push_back(r.config.run_id + ": not a clean run (eta " + eta_tag(r.config.eta) + ")");
    } else if (r.snapshots.empty()) {
      p.excluded.push_back(r.config.run_id + ": no snapshots");
    } else {
      good.push_back(&r);
    }
  }
  if (good.size() < 3) {
    std::string why = "phase-1 calibration needs at least three completed clean runs, have " +
                      std::to_string(good.size());
    for (const auto& e : p.excluded) why += "; " + e;
    throw Error(ErrorCode::InvalidArgument, why);
  }

  std::vector<monitor::Trajectory> traj;
  for (const auto* r : good) traj.push_back(trajectory(*r, options.layer));
  p.baseline = monitor::build_baseline(traj);

  const auto residuals = monitor::leave_one_out_residuals(traj);
  const std::size_t len = traj.front().values.size();
  if (len >= 10) {
    std::vector<std::vector<double>> seqs;
    for (std::size_t i = 0; i < traj.size(); ++i) {
      seqs.emplace_back(residuals.begin() + static_cast<std::ptrdiff_t>(i * len),
                        residuals.begin() + static_cast<std::ptrdiff_t>((i + 1) * len));
    }
    p.residual_autocorrelation = monitor::autocorr_lag1(seqs, {2000, options.calibration.seed});
  }
  p.calibration = monitor::calibrate_on_residuals(monitor::ResidualSampler::resample(residuals), options.k,
                                                  options.arl0, options.calibration);

  const auto& first = good.front()->snapshots.front();
  p.layer_names = first.layers;
  p.window = options.window.value_or(middle_third(good.front()->config.epochs));
  p.clean_window_means.assign(p.layer_names.size(), {});
  for (std::size_t l = 0; l < p.layer_names.size(); ++l) {
    for (const auto* r : good) {
      p.clean_window_means[l].push_back(window_mean(*r, {LayerSelector::Kind::Index, l}, p.window));
    }
  }
  return p;
}

Phase1Result phase1_calibrate(const RunConfig& base, const Phase1Options& options, const fs::path& root) {
  if (options.ensemble_size < 3) throw Error(ErrorCode::InvalidArgument, "phase 1 needs S >= 3 clean runs");
  std::vector<RunConfig> configs;
  for (std::size_t i = 0; i < options.ensemble_size; ++i) {
    configs.push_back(derive_config(base, "clean-r" + std::to_string(i), 0.0, i));
  }
  const auto runs = train_all(configs, root / "runs", options.threads);
  auto p = calibrate_from_runs(runs, options);
  save_phase1(p, root);
  return p;
}

nlohmann::json to_json(const Phase1Result& p) {
  nlohmann::json j;
  j["baseline"] = monitor::to_json(p.baseline);
  j["calibration"] = monitor::to_json(p.calibration);
  j["layer"] = p.layer.to_string();
  j["window"] = {p.window.first, p.window.second};
  j["excluded"] = p.excluded;
  j["layer_names"] = p.layer_names;
  j["clean_window_means"] = p.clean_window_means;
  j["residual_autocorrelation"] = monitor::to_json(p.residual_autocorrelation);
  return j;
}

void save_phase1(const Phase1Result& p, const fs::path& dir) {
  fs::create_directories(dir);
  auto baseline = monitor::to_json(p.baseline);
  baseline["k"] = p.calibration.k;
  baseline["h"] = p.calibration.h;
  baseline["arl0_target"] = p.calibration.arl0_target;
  baseline["arl0_achieved"] = p.calibration.arl0_achieved;
  baseline["seed"] = p.calibration.seed;
  write_json_file(dir / "baseline.json", baseline);
  write_json_file(dir / "calibration.json", monitor::to_json(p.calibration));
  write_json_file(dir / "phase1.json", to_json(p));
}

Phase1Result load_phase1(const fs::path& dir) {
  const auto j = read_json_file(dir / "phase1.json");
  Phase1Result p;
  try {
    p.baseline = monitor::baseline_from_json(j.at("baseline"));
    p.calibration = monitor::calibration_from_json(j.at("calibration"));
    p.layer = parse_layer_selector(j.at("layer").get<std::string>());
    p.window = {j.at("window")[0].get<int>(), j.at("window")[1].get<int>()};
    p.excluded = j.at("excluded").get<std::vector<std::string>>();
    p.layer_names = j.at("layer_names").get<std::vector<std::string>>();
    p.clean_window_means = j.at("clean_window_means").get<std::vector<std::vector<double>>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Parse, (dir / "phase1.json").string() + ": " + e.what());
  }
  return p;
}

DetectionTable phase2_detect(const Phase1Result& phase1, const std::vector<RunRecord>& runs,
                             const monitor::BootstrapSpec& bootstrap) {
  DetectionTable t;
  t.k = phase1.calibration.k;
  t.h = phase1.calibration.h;
  t.arl0 = phase1.calibration.arl0_target;
  t.layer = phase1.layer.to_string();
  t.horizon = phase1.baseline.grid.size();
  t.window = phase1.window;

  std::map<double, std::vector<const RunRecord*>> arms;
  for (const auto& r : runs) {
    DetectionRow row;
    row.run_id = r.config.run_id;
    row.eta = r.config.eta;
    row.seed = r.config.seeds.init;
    row.failed = r.failed;
    row.failure = r.failure;
    row.detection.run_id = r.config.run_id;
    if (!r.failed) {
      row.detection = monitor::detect(trajectory(r, phase1.layer), phase1.baseline, t.k, t.h);
      arms[r.config.eta].push_back(&r);
    }
    t.rows.push_back(std::move(row));
  }

  std::map<std::string, const DetectionRow*> by_id;
  for (const auto& row : t.rows) by_id[row.run_id] = &row;

  for (const auto& [eta, members] : arms) {
    ArmSummary a;
    a.eta = eta;
    a.runs = members.size();
    std::vector<double> epochs;
    for (const auto* r : members) {
      const auto& d = by_id.at(r->config.run_id)->detection;
      if (!d.alarmed) continue;
      ++a.alarmed;
      if (d.detection_epoch) epochs.push_back(*d.detection_epoch);
    }
    a.alert_rate = static_cast<double>(a.alarmed) / static_cast<double>(a.runs);
    a.alert_ci = monitor::wilson_interval(a.alarmed, a.runs);
    if (!epochs.empty()) {
      double m = 0.0;
      for (double e : epochs) m += e;
      m /= static_cast<double>(epochs.size());
      double v = 0.0;
      for (double e : epochs) v += (e - m) * (e - m);
      a.epoch_mean = m;
      a.epoch_std = epochs.size() > 1 ? std::sqrt(v / static_cast<double>(epochs.size() - 1)) : 0.0;
    }
    if (eta == 0.0) {
      a.expected_false_alarm = monitor::false_alarm_probability(static_cast<double>(t.horizon), t.arl0);
      a.false_alarm_consistent = a.alert_ci.contains(*a.expected_false_alarm);
    }
    if (members.size() >= 2) {
      for (std::size_t l = 0; l < phase1.clean_window_means.size(); ++l) {
        std::vector<double> noisy;
        for (const auto* r : members) noisy.push_back(window_mean(*r, {LayerSelector::Kind::Index, l}, t.window));
        auto e = monitor::cohens_d(phase1.clean_window_means[l], noisy, bootstrap);
        e.layer = l;
        e.eta = eta;
        e.window = t.window;
        a.effects.push_back(std::move(e));
      }
    }
    t.arms.push_back(std::move(a));
  }
  return t;
}

nlohmann::json to_json(const DetectionTable& t) {
  nlohmann::json j;
  j["k"] = t.k;
  j["h"] = t.h;
  j["arl0"] = t.arl0;
  j["layer"] = t.layer;
  j["horizon"] = t.horizon;
  j["window"] = {t.window.first, t.window.second};
  auto& rows = j["rows"] = nlohmann::json::array();
  for (const auto& r : t.rows) {
    nlohmann::json row = monitor::to_json(r.detection);
    row["eta"] = r.eta;
    row["seed"] = r.seed;
    row["status"] = r.failed ? "failed" : "ok";
    if (r.failed) row["failure"] = r.failure;
    rows.push_back(std::move(row));
  }
  auto& arms = j["arms"] = nlohmann::json::array();
  for (const auto& a : t.arms) {
    nlohmann::json arm;
    arm["eta"] = a.eta;
    arm["runs"] = a.runs;
    arm["alarmed"] = a.alarmed;
    arm["alert_rate"] = a.alert_rate;
    arm["alert_rate_ci"] = monitor::to_json(a.alert_ci);
    arm["detection_epoch_mean"] = optional_json(a.epoch_mean);
    arm["detection_epoch_std"] = optional_json(a.epoch_std);
    if (a.expected_false_alarm) {
      arm["expected_false_alarm"] = *a.expected_false_alarm;
      arm["false_alarm_consistent"] = *a.false_alarm_consistent;
    }
    auto& eff = arm["effect_sizes"] = nlohmann::json::array();
    for (const auto& e : a.effects) eff.push_back(monitor::to_json(e));
    arms.push_back(std::move(arm));
  }
  return j;
}

SweepGrid sweep_grid_from_json(const nlohmann::json& j) {
  SweepGrid g;
  try {
    g.base = run_config_from_json(j.at("base"));
    g.ensemble_size = j.value("ensemble_size", g.ensemble_size);
    g.etas = j.value("etas", g.etas);
    g.seeds_per_eta = j.value("seeds_per_eta", g.seeds_per_eta);
    g.ks = j.value("k", g.ks);
    g.arl0s = j.value("arl0", g.arl0s);
    g.layer = parse_layer_selector(j.value("layer", std::string("head")));
    g.calibration.sequences = j.value("sequences", g.calibration.sequences);
    g.calibration.seed = j.value("calibration_seed", g.calibration.seed);
    g.calibration.tolerance = j.value("tolerance", g.calibration.tolerance);
    if (j.contains("out") && !j["out"].is_null()) g.out = j["out"].get<std::string>();
    g.threads = j.value("threads", g.threads);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Parse, std::string("sweep grid: ") + e.what());
  }
  if (g.ensemble_size < 3) throw Error(ErrorCode::InvalidArgument, "the sweep needs ensemble_size >= 3");
  if (g.ks.empty() || g.arl0s.empty()) throw Error(ErrorCode::InvalidArgument, "the sweep grid is empty");
  return g;
}

SweepReport sensitivity_sweep(const SweepGrid& grid) {
  std::vector<RunConfig> clean;
  for (std::size_t i = 0; i < grid.ensemble_size; ++i) {
    clean.push_back(derive_config(grid.base, "clean-r" + std::to_string(i), 0.0, i));
  }
  const auto noisy = arm_configs(grid.base, grid.etas, grid.seeds_per_eta);
  std::optional<fs::path> runs_dir;
  if (grid.out) runs_dir = *grid.out / "runs";
  const auto clean_runs = train_all(clean, runs_dir, grid.threads);
  const auto noisy_runs = train_all(noisy, runs_dir, grid.threads);

  SweepReport report;
  for (double k : grid.ks) {
    for (double arl0 : grid.arl0s) {
      Phase1Options o;
      o.k = k;
      o.arl0 = arl0;
      o.calibration = grid.calibration;
      o.layer = grid.layer;
      const auto p = calibrate_from_runs(clean_runs, o);
      SweepCell cell;
      cell.k = k;
      cell.arl0 = arl0;
      cell.h = p.calibration.h;
      cell.arl0_achieved = p.calibration.arl0_achieved;
      cell.table = phase2_detect(p, noisy_runs, {1000, grid.calibration.seed});
      report.cells.push_back(std::move(cell));
    }
  }
  if (grid.out) write_json_file(*grid.out / "sweep.json", to_json(report));
  return report;
}

nlohmann::json to_json(const SweepReport& r) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : r.cells) {
    nlohmann::json cell;
    cell["k"] = c.k;
    cell["arl0"] = c.arl0;
    cell["h"] = c.h;
    cell["arl0_achieved"] = c.arl0_achieved;
    nlohmann::json power = nlohmann::json::array();
    for (const auto& a : c.table.arms) {
      nlohmann::json entry{{"eta", a.eta}, {"alert_rate", a.alert_rate}, {"ci", monitor::to_json(a.alert_ci)}};
      if (a.expected_false_alarm) {
        cell["false_alarm_rate"] = a.alert_rate;
        cell["false_alarm_ci"] = monitor::to_json(a.alert_ci);
        cell["expected_false_alarm"] = *a.expected_false_alarm;
      } else {
        power.push_back(std::move(entry));
      }
    }
    cell["power"] = std::move(power);
    cell["table"] = to_json(c.table);
    cells.push_back(std::move(cell));
  }
  return {{"cells", cells}};
}

std::vector<RunRecord> load_runs(const std::string& pattern) {
  const fs::path p(pattern);
  fs::path dir = p.parent_path();
  const std::string name = p.filename().string();
  if (dir.empty()) dir = ".";
  if (dir.string().find_first_of("*?[") != std::string::npos) {
    throw Error(ErrorCode::InvalidArgument, "wildcards are only supported in the last path component: " + pattern);
  }
  if (!fs::is_directory(dir)) throw Error(ErrorCode::Io, "no such directory: " + dir.string());
  std::vector<fs::path> matches;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_directory()) continue;
    if (fnmatch(name.c_str(), entry.path().filename().c_str(), 0) != 0) continue;
    if (fs::exists(entry.path() / "config.json")) matches.push_back(entry.path());
  }
  std::sort(matches.begin(), matches.end());
  if (matches.empty()) throw Error(ErrorCode::Io, "no run directories match " + pattern);
  std::vector<RunRecord> out;
  for (const auto& m : matches) out.push_back(load_run(m));
  return out;
}

}  // namespace curvmon::harness
