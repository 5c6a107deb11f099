#pragma once

#include <nlohmann/json.hpp>

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace curvmon::monitor {

struct Interval {
  double lower = 0.0;
  double upper = 0.0;
  bool contains(double x) const noexcept { return lower <= x && x <= upper; }
};

/// Wilson score interval for `successes` out of `trials` at normal quantile z.
Interval wilson_interval(std::size_t successes, std::size_t trials, double z = 1.959963984540054);

struct EffectSize {
  std::size_t layer = 0;
  double eta = 0.0;
  std::optional<double> d;  // empty when the pooled variance is zero
  std::optional<Interval> ci;
  std::pair<int, int> window{0, 0};  // inclusive epoch range
  std::size_t n_clean = 0;
  std::size_t n_noisy = 0;
  double mean_clean = 0.0;
  double mean_noisy = 0.0;
  double sd_clean = 0.0;
  double sd_noisy = 0.0;
};

struct BootstrapSpec {
  std::size_t replicates = 10000;
  std::uint64_t seed = 0;
};

/// d = (mu_0 - mu_eta) / sqrt((s_0^2 + s_eta^2) / 2) over per-run window
/// means, with a percentile bootstrap resampling runs within each arm.
EffectSize cohens_d(std::span<const double> clean, std::span<const double> noisy, const BootstrapSpec& bootstrap = {});

struct Autocorrelation {
  std::optional<double> rho;  // empty for constant input
  std::optional<Interval> ci;
  std::size_t pairs = 0;
};

/// Pooled lag-1 autocorrelation around the pooled mean, with a bootstrap
/// over sequences. Every sequence needs at least 10 points.
Autocorrelation autocorr_lag1(std::span<const std::vector<double>> sequences, const BootstrapSpec& bootstrap = {});

nlohmann::json to_json(const EffectSize& e);
nlohmann::json to_json(const Autocorrelation& a);
nlohmann::json to_json(const Interval& i);

}  // namespace curvmon::monitor
