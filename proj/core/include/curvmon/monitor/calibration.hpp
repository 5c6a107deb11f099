#pragma once

#include "curvmon/monitor/cusum.hpp"
#include "curvmon/rng.hpp"

#include <nlohmann/json.hpp>

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace curvmon::monitor {

/// In-control residual generator for run-length Monte Carlo: IID draws with
/// replacement from a pooled residual set, or exact standard normals.
class ResidualSampler {
 public:
  static ResidualSampler resample(std::vector<double> pool);
  static ResidualSampler standard_normal();

  double draw(CounterRng& rng) const;
  bool parametric() const noexcept { return pool_.empty(); }
  std::size_t pool_size() const noexcept { return pool_.size(); }

 private:
  std::vector<double> pool_;
};

struct ArlEstimate {
  double mean = 0.0;
  double standard_error = 0.0;
  std::size_t sequences = 0;  // sequences simulated
  std::size_t censored = 0;   // sequences stopped at the per-sequence cap
  bool lower_bound = false;   // stopped early once the mean exceeded `stop_above`
};

/// Mean run length of the two-sided CUSUM over `sequences` synthetic
/// sequences; sequence i always uses substream (seed, i), so estimates at
/// different h share random numbers and are monotone in h. With
/// `stop_above`, simulation ends as soon as the mean over all sequences is
/// known to exceed it.
ArlEstimate estimate_arl(const ResidualSampler& sampler, double k, double h, std::size_t sequences,
                         std::uint64_t seed, std::size_t cap, std::optional<double> stop_above = std::nullopt);

struct CalibrationOptions {
  double tolerance = 0.05;
  std::size_t sequences = 4000;
  std::uint64_t seed = 0;
  double h_low = 0.5;
  double h_high = 50.0;
  double h_limit = 1.0e4;  // bracket expansion stops here
  int max_iterations = 40;
  double cap_factor = 50.0;  // per-sequence cap in units of the target
};

struct Calibration {
  double k = 0.0;
  double h = 0.0;
  double arl0_target = 0.0;
  double arl0_achieved = 0.0;
  double arl0_standard_error = 0.0;
  std::size_t sequences = 0;
  std::size_t residual_count = 0;
  int iterations = 0;
  bool converged = false;
  std::uint64_t seed = 0;
  std::string method;
};

/// Bisection in h until |ARL(h) - target| / target <= tolerance.
Calibration calibrate_on_residuals(const ResidualSampler& sampler, double k, double target,
                                   const CalibrationOptions& options = {});

/// Holds out each clean run in turn, standardizes it against the other S - 1
/// and pools the residuals. Needs S >= 3.
std::vector<double> leave_one_out_residuals(std::span<const Trajectory> clean,
                                            std::optional<double> sigma_floor = std::nullopt);

Calibration calibrate_threshold(std::span<const Trajectory> clean, double k, double target,
                                const CalibrationOptions& options = {});

/// 1 - exp(-T / ARL0)
double false_alarm_probability(double horizon, double arl0);

nlohmann::json to_json(const Calibration& c);
Calibration calibration_from_json(const nlohmann::json& j);

}  // namespace curvmon::monitor
