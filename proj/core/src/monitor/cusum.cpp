#include "curvmon/monitor/cusum.hpp"

#include "curvmon/error.hpp"

#include <algorithm>
#include <cmath>

namespace curvmon::monitor {

double default_sigma_floor(std::span<const double> mu0) {
  std::vector<double> a;
  for (double m : mu0) a.push_back(std::abs(m));
  double median = 0.0;
  if (!a.empty()) {
    std::sort(a.begin(), a.end());
    const std::size_t n = a.size();
    median = n % 2 ? a[n / 2] : 0.5 * (a[n / 2 - 1] + a[n / 2]);
  }
  return std::max(1e-8 * median, 1e-12);
}

Baseline build_baseline(std::span<const Trajectory> runs, std::optional<double> sigma_floor) {
  if (runs.size() < 2) throw Error(ErrorCode::InvalidArgument, "a baseline needs at least two clean runs");
  const auto& grid = runs.front().steps;
  if (grid.empty()) throw Error(ErrorCode::InvalidArgument, "run '" + runs.front().run_id + "' has an empty grid");
  for (std::size_t t = 1; t < grid.size(); ++t) {
    if (grid[t] <= grid[t - 1]) {
      throw Error(ErrorCode::GridMismatch, "run '" + runs.front().run_id + "' grid is not strictly increasing");
    }
  }
  std::string offenders;
  for (const auto& r : runs) {
    if (r.steps != grid || r.values.size() != grid.size()) offenders += (offenders.empty() ? "" : ", ") + r.run_id;
  }
  if (!offenders.empty()) {
    throw Error(ErrorCode::GridMismatch,
                "runs off the grid of '" + runs.front().run_id + "': " + offenders);
  }

  Baseline b;
  b.grid = grid;
  b.ensemble_size = runs.size();
  for (const auto& r : runs) b.run_ids.push_back(r.run_id);
  const auto S = static_cast<double>(runs.size());
  for (std::size_t t = 0; t < grid.size(); ++t) {
    double m = 0.0;
    for (const auto& r : runs) m += r.values[t];
    m /= S;
    double ss = 0.0;
    for (const auto& r : runs) ss += (r.values[t] - m) * (r.values[t] - m);
    b.mu0.push_back(m);
    b.sigma0.push_back(std::sqrt(ss / (S - 1.0)));
  }
  b.sigma_floor = sigma_floor.value_or(default_sigma_floor(b.mu0));
  if (!(b.sigma_floor > 0.0)) throw Error(ErrorCode::InvalidArgument, "sigma floor must be positive");
  for (double& s : b.sigma0) s = std::max(s, b.sigma_floor);
  return b;
}

std::vector<double> standardize(const Trajectory& trajectory, const Baseline& baseline) {
  if (trajectory.values.size() != trajectory.steps.size()) {
    throw Error(ErrorCode::ShapeMismatch, "run '" + trajectory.run_id + "' has mismatched steps and values");
  }
  std::vector<double> z;
  z.reserve(trajectory.steps.size());
  for (std::size_t i = 0; i < trajectory.steps.size(); ++i) {
    if (i >= baseline.grid.size() || trajectory.steps[i] != baseline.grid[i]) {
      throw Error(ErrorCode::GridMismatch, "run '" + trajectory.run_id + "' step " +
                                               std::to_string(trajectory.steps[i]) + " is not on the baseline grid");
    }
    z.push_back((trajectory.values[i] - baseline.mu0[i]) / baseline.sigma0[i]);
  }
  return z;
}

CusumState::CusumState(double k, double h) : k_(k), h_(h) {
  if (!std::isfinite(k) || k < 0.0) throw Error(ErrorCode::InvalidArgument, "drift k must be finite and >= 0");
  if (!std::isfinite(h) || h <= 0.0) throw Error(ErrorCode::InvalidArgument, "threshold h must be finite and > 0");
}

void CusumState::step(double z, std::uint64_t t) {
  if (!std::isfinite(z)) {
    throw Error(ErrorCode::NonFinite, "standardized value at step " + std::to_string(t) + " is not finite");
  }
  s_plus_ = std::max(0.0, s_plus_ + z - k_);
  s_minus_ = std::max(0.0, s_minus_ - z - k_);
  const double m = std::max(s_plus_, s_minus_);
  max_stat_ = std::max(max_stat_, m);
  if (!alarm_index_ && m > h_) alarm_index_ = history_.size();
  history_.push_back({t, z, s_plus_, s_minus_});
}

std::optional<std::uint64_t> CusumState::alarm_step() const {
  if (!alarm_index_) return std::nullopt;
  return history_[*alarm_index_].step;
}

CusumState cusum_step(CusumState state, double z, std::uint64_t t) {
  state.step(z, t);
  return state;
}

CusumState replay(double k, double h, std::span<const CusumPoint> history) {
  CusumState s(k, h);
  for (const auto& p : history) s.step(p.z, p.step);
  return s;
}

Detection detect(const Trajectory& trajectory, const Baseline& baseline, double k, double h) {
  const auto z = standardize(trajectory, baseline);
  CusumState s(k, h);
  for (std::size_t i = 0; i < z.size(); ++i) s.step(z[i], trajectory.steps[i]);
  Detection d;
  d.run_id = trajectory.run_id;
  d.alarmed = s.alarmed();
  d.max_statistic = s.max_statistic();
  if (s.alarmed()) {
    d.detection_step = s.alarm_step();
    if (trajectory.epochs.size() == trajectory.steps.size()) d.detection_epoch = trajectory.epochs[*s.alarm_index()];
  }
  return d;
}

nlohmann::json to_json(const Baseline& b) {
  return {{"grid", b.grid},       {"mu0", b.mu0},         {"sigma0", b.sigma0},
          {"ensemble_size", b.ensemble_size}, {"run_ids", b.run_ids}, {"sigma_floor", b.sigma_floor}};
}

Baseline baseline_from_json(const nlohmann::json& j) {
  try {
    Baseline b;
    b.grid = j.at("grid").get<std::vector<std::uint64_t>>();
    b.mu0 = j.at("mu0").get<std::vector<double>>();
    b.sigma0 = j.at("sigma0").get<std::vector<double>>();
    b.ensemble_size = j.at("ensemble_size").get<std::size_t>();
    b.run_ids = j.at("run_ids").get<std::vector<std::string>>();
    b.sigma_floor = j.at("sigma_floor").get<double>();
    if (b.mu0.size() != b.grid.size() || b.sigma0.size() != b.grid.size()) {
      throw Error(ErrorCode::Parse, "baseline arrays differ in length from the grid");
    }
    return b;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Parse, std::string("baseline: ") + e.what());
  }
}

nlohmann::json to_json(const Detection& d) {
  nlohmann::json j;
  j["run_id"] = d.run_id;
  j["alarmed"] = d.alarmed;
  j["detection_step"] = d.detection_step ? nlohmann::json(*d.detection_step) : nlohmann::json(nullptr);
  j["detection_epoch"] = d.detection_epoch ? nlohmann::json(*d.detection_epoch) : nlohmann::json(nullptr);
  j["max_statistic"] = d.max_statistic;
  return j;
}

}  // namespace curvmon::monitor
