#pragma once

#include "curvmon/oracle/dense_hessian.hpp"
#include "curvmon/trace/hutchinson.hpp"

#include <nlohmann/json.hpp>

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace curvmon::variance {

/// Variance of a K-probe Rademacher estimate at a fixed Hessian block:
/// (2 / K) * (||H_l||_F^2 - sum_i (H_l)_ii^2).
double variance_fixed_hessian(double frobenius_sq, double diag_sq_sum, std::size_t K);

/// Conservative form used when only ||H_l||_F^2 is known: (2 / K) ||H_l||_F^2.
double variance_upper_bound(double frobenius_sq, std::size_t K);

/// ||H_l||_F / |T_l|; empty when T_l == 0, where the trace carries no scale.
std::optional<double> anisotropy(double frobenius_sq, double trace);

/// sqrt(2 / K) * kappa
double relative_error_bound(double kappa, std::size_t K);

struct Interval {
  double lower = 0.0;
  double upper = 0.0;
  bool contains(double x) const noexcept { return lower <= x && x <= upper; }
};

struct BootstrapOptions {
  std::size_t replicates = 2000;
  std::uint64_t seed = 0;
  double level = 0.95;
};

struct KStarEstimate {
  std::size_t batches = 0;
  std::size_t probes_per_batch = 0;  // smallest K across batches
  double v_h1 = 0.0;      // mean over batches of the per-batch probe sample variance
  double v_b_raw = 0.0;   // sample variance over batches of the per-batch mean
  double v_b = 0.0;       // v_b_raw minus the probe-noise share mean_b(s_b^2 / K_b)
  std::optional<double> k_star;  // empty when v_b <= 0 (batch noise below resolution)
  std::optional<Interval> ci;    // percentile interval over batch resamples with v_b > 0
  double ci_defined_fraction = 0.0;
};

/// K* = V_H(1) / V_B from per-probe quadratic forms, samples[b][k] for batch b.
KStarEstimate k_star(std::span<const std::vector<double>> samples, const BootstrapOptions& bootstrap = {});
/// Same, reading layer `layer` from each snapshot (one snapshot per batch).
KStarEstimate k_star(std::span<const trace::TraceSnapshot> snapshots, std::size_t layer,
                     const BootstrapOptions& bootstrap = {});

enum class Provenance { Oracle, Estimated };

struct LayerVariance {
  std::size_t layer = 0;
  std::string name;
  std::size_t K = 0;
  double trace = 0.0;
  double frobenius_sq = 0.0;
  std::optional<double> diag_sq_sum;  // known only from the oracle
  double var_fixed_h = 0.0;
  Provenance var_source = Provenance::Estimated;
  std::optional<double> kappa;
  std::optional<double> rel_error_bound;
  std::optional<KStarEstimate> k_star;
};

struct VarianceReport {
  std::vector<LayerVariance> layers;
};

/// Fixed-Hessian variance inputs for every layer straight from a dense Hessian.
VarianceReport report_from_oracle(const oracle::DenseHessian& h, std::size_t K);

/// Fixed-Hessian variance inputs from Hutchinson estimates of T_l and ||H_l||_F^2; the
/// variance uses the conservative bound.
LayerVariance layer_from_estimates(std::size_t layer, std::string name, double trace, double frobenius_sq,
                                   std::size_t K);

nlohmann::json to_json(const KStarEstimate& k);
nlohmann::json to_json(const VarianceReport& report);
/// Aligned per-layer text table.
std::string format_table(const VarianceReport& report);

}  // namespace curvmon::variance
