#pragma once

#include <nlohmann/json.hpp>

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace curvmon::monitor {

/// One run's monitored statistic on the snapshot grid.
struct Trajectory {
  std::string run_id;
  std::vector<std::uint64_t> steps;
  std::vector<double> values;
  std::vector<int> epochs;  // optional; parallel to steps when present
};

struct Baseline {
  std::vector<std::uint64_t> grid;
  std::vector<double> mu0;
  std::vector<double> sigma0;
  std::size_t ensemble_size = 0;
  std::vector<std::string> run_ids;
  double sigma_floor = 0.0;
};

/// max(1e-8 * median |mu0|, 1e-12)
double default_sigma_floor(std::span<const double> mu0);

/// Per-step ensemble mean and sample standard deviation (divisor S - 1),
/// the latter floored at `sigma_floor` (default_sigma_floor when absent).
Baseline build_baseline(std::span<const Trajectory> runs, std::optional<double> sigma_floor = std::nullopt);

/// z_t = (x_t - mu0(t)) / sigma0(t); the trajectory must sit exactly on the grid.
std::vector<double> standardize(const Trajectory& trajectory, const Baseline& baseline);

struct CusumPoint {
  std::uint64_t step = 0;
  double z = 0.0;
  double s_plus = 0.0;
  double s_minus = 0.0;

  bool operator==(const CusumPoint&) const = default;
};

/// Two-sided Page-Hinkley statistic
///   S+_t = max(0, S+_{t-1} + z_t - k),  S-_t = max(0, S-_{t-1} - z_t - k)
/// with an alarm latched at the first step where max(S+, S-) > h.
class CusumState {
 public:
  CusumState(double k, double h);

  void step(double z, std::uint64_t t);

  double k() const noexcept { return k_; }
  double h() const noexcept { return h_; }
  double s_plus() const noexcept { return s_plus_; }
  double s_minus() const noexcept { return s_minus_; }
  double max_statistic() const noexcept { return max_stat_; }
  bool alarmed() const noexcept { return alarm_index_.has_value(); }
  std::optional<std::size_t> alarm_index() const noexcept { return alarm_index_; }
  std::optional<std::uint64_t> alarm_step() const;
  const std::vector<CusumPoint>& history() const noexcept { return history_; }

  bool operator==(const CusumState&) const = default;

 private:
  double k_;
  double h_;
  double s_plus_ = 0.0;
  double s_minus_ = 0.0;
  double max_stat_ = 0.0;
  std::optional<std::size_t> alarm_index_;
  std::vector<CusumPoint> history_;
};

/// Functional form of CusumState::step.
CusumState cusum_step(CusumState state, double z, std::uint64_t t);

/// Rebuilds a state from the (step, z) pairs of a history.
CusumState replay(double k, double h, std::span<const CusumPoint> history);

struct Detection {
  std::string run_id;
  bool alarmed = false;
  std::optional<std::uint64_t> detection_step;
  std::optional<int> detection_epoch;
  double max_statistic = 0.0;
};

Detection detect(const Trajectory& trajectory, const Baseline& baseline, double k, double h);

nlohmann::json to_json(const Baseline& baseline);
Baseline baseline_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Detection& d);

}  // namespace curvmon::monitor
