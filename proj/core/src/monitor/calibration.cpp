#include "curvmon/monitor/calibration.hpp"

#include "curvmon/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace curvmon::monitor {

namespace {

constexpr std::uint64_t kArlStream = 0xa21f0c5eULL;

// Steps to the first alarm, or cap + 1 when none occurs within the cap.
std::size_t run_length(const ResidualSampler& sampler, double k, double h, std::uint64_t seed, std::size_t index,
                       std::size_t cap) {
  CounterRng rng(seed, kArlStream, index);
  double sp = 0.0, sm = 0.0;
  for (std::size_t t = 1; t <= cap; ++t) {
    const double z = sampler.draw(rng);
    sp = std::max(0.0, sp + z - k);
    sm = std::max(0.0, sm - z - k);
    if (sp > h || sm > h) return t;
  }
  return cap + 1;
}

}  // namespace

ResidualSampler ResidualSampler::resample(std::vector<double> pool) {
  if (pool.empty()) throw Error(ErrorCode::InvalidArgument, "residual pool is empty");
  for (double x : pool) {
    if (!std::isfinite(x)) throw Error(ErrorCode::NonFinite, "residual pool contains a non-finite value");
  }
  ResidualSampler s;
  s.pool_ = std::move(pool);
  return s;
}

ResidualSampler ResidualSampler::standard_normal() { return ResidualSampler{}; }

double ResidualSampler::draw(CounterRng& rng) const {
  if (pool_.empty()) return rng.normal();
  return pool_[static_cast<std::size_t>(rng.below(pool_.size()))];
}

ArlEstimate estimate_arl(const ResidualSampler& sampler, double k, double h, std::size_t sequences,
                         std::uint64_t seed, std::size_t cap, std::optional<double> stop_above) {
  if (sequences == 0 || cap == 0) throw Error(ErrorCode::InvalidArgument, "ARL estimation needs sequences and a cap");
  ArlEstimate out;
  const double budget = stop_above ? *stop_above * static_cast<double>(sequences) : 0.0;
  double sum = 0.0, sum_sq = 0.0;
  for (std::size_t i = 0; i < sequences; ++i) {
    std::size_t limit = cap;
    if (stop_above) {
      // Enough steps to push the running sum past the budget.
      const double remaining = std::floor(budget - sum) + 1.0;
      limit = std::min<std::size_t>(cap, static_cast<std::size_t>(std::max(1.0, remaining)));
    }
    std::size_t rl = run_length(sampler, k, h, seed, i, limit);
    if (rl > limit) {
      if (limit == cap) ++out.censored;
      rl = limit;
    }
    sum += static_cast<double>(rl);
    sum_sq += static_cast<double>(rl) * static_cast<double>(rl);
    ++out.sequences;
    if (stop_above && sum > budget) {
      out.lower_bound = true;
      out.mean = sum / static_cast<double>(sequences);
      return out;
    }
  }
  const auto n = static_cast<double>(out.sequences);
  out.mean = sum / n;
  const double var = n > 1 ? std::max(0.0, (sum_sq - n * out.mean * out.mean) / (n - 1.0)) : 0.0;
  out.standard_error = std::sqrt(var / n);
  return out;
}

Calibration calibrate_on_residuals(const ResidualSampler& sampler, double k, double target,
                                   const CalibrationOptions& o) {
  if (!(target > 0.0)) throw Error(ErrorCode::InvalidArgument, "target ARL0 must be positive");
  if (!(o.tolerance > 0.0)) throw Error(ErrorCode::InvalidArgument, "tolerance must be positive");
  const auto cap = static_cast<std::size_t>(std::ceil(o.cap_factor * target));
  const double upper = target * (1.0 + o.tolerance);
  auto arl = [&](double h) { return estimate_arl(sampler, k, h, o.sequences, o.seed, cap, upper); };

  Calibration c;
  c.k = k;
  c.arl0_target = target;
  c.sequences = o.sequences;
  c.residual_count = sampler.pool_size();
  c.seed = o.seed;
  c.method = sampler.parametric() ? "standard-normal Monte Carlo + bisection"
                                  : "leave-one-out residuals, iid resampling Monte Carlo + bisection";

  double lo = o.h_low, hi = o.h_high;
  while (arl(lo).mean > target) {
    lo /= 2.0;
    if (lo < 1e-6) throw Error(ErrorCode::NotBracketed, "ARL0 exceeds the target even for h near 0");
  }
  while (arl(hi).mean < target) {
    lo = hi;
    hi *= 2.0;
    if (hi > o.h_limit) {
      throw Error(ErrorCode::NotBracketed, "ARL0 stays below the target up to h = " + std::to_string(o.h_limit));
    }
  }

  ArlEstimate best_est;
  double best_h = hi;
  double best_err = std::numeric_limits<double>::infinity();
  for (int it = 0; it < o.max_iterations; ++it) {
    const double mid = 0.5 * (lo + hi);
    const auto e = arl(mid);
    ++c.iterations;
    const double err = std::abs(e.mean - target) / target;
    if (!e.lower_bound && err < best_err) {
      best_err = err;
      best_h = mid;
      best_est = e;
    }
    if (!e.lower_bound && err <= o.tolerance) {
      c.converged = true;
      break;
    }
    (e.mean < target ? lo : hi) = mid;
  }
  if (!std::isfinite(best_err)) {
    best_est = estimate_arl(sampler, k, best_h, o.sequences, o.seed, cap);
  }
  c.h = best_h;
  c.arl0_achieved = best_est.mean;
  c.arl0_standard_error = best_est.standard_error;
  return c;
}

std::vector<double> leave_one_out_residuals(std::span<const Trajectory> clean, std::optional<double> sigma_floor) {
  if (clean.size() < 3) {
    throw Error(ErrorCode::InvalidArgument, "leave-one-out calibration needs at least three clean runs");
  }
  std::vector<double> pooled;
  std::vector<Trajectory> rest;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    rest.clear();
    for (std::size_t j = 0; j < clean.size(); ++j)
      if (j != i) rest.push_back(clean[j]);
    const auto b = build_baseline(rest, sigma_floor);
    const auto z = standardize(clean[i], b);
    pooled.insert(pooled.end(), z.begin(), z.end());
  }
  return pooled;
}

Calibration calibrate_threshold(std::span<const Trajectory> clean, double k, double target,
                                const CalibrationOptions& options) {
  return calibrate_on_residuals(ResidualSampler::resample(leave_one_out_residuals(clean)), k, target, options);
}

double false_alarm_probability(double horizon, double arl0) {
  if (horizon < 0.0) throw Error(ErrorCode::InvalidArgument, "horizon must be non-negative");
  if (!(arl0 > 0.0)) throw Error(ErrorCode::InvalidArgument, "ARL0 must be positive");
  return -std::expm1(-horizon / arl0);
}

nlohmann::json to_json(const Calibration& c) {
  return {{"k", c.k},
          {"h", c.h},
          {"arl0_target", c.arl0_target},
          {"arl0_achieved", c.arl0_achieved},
          {"arl0_standard_error", c.arl0_standard_error},
          {"sequences", c.sequences},
          {"residual_count", c.residual_count},
          {"iterations", c.iterations},
          {"converged", c.converged},
          {"seed", c.seed},
          {"method", c.method}};
}

Calibration calibration_from_json(const nlohmann::json& j) {
  try {
    Calibration c;
    c.k = j.at("k").get<double>();
    c.h = j.at("h").get<double>();
    c.arl0_target = j.at("arl0_target").get<double>();
    c.arl0_achieved = j.at("arl0_achieved").get<double>();
    c.arl0_standard_error = j.value("arl0_standard_error", 0.0);
    c.sequences = j.value("sequences", std::size_t{0});
    c.residual_count = j.value("residual_count", std::size_t{0});
    c.iterations = j.value("iterations", 0);
    c.converged = j.value("converged", false);
    c.seed = j.value("seed", std::uint64_t{0});
    c.method = j.value("method", std::string{});
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Parse, std::string("calibration: ") + e.what());
  }
}

}  // namespace curvmon::monitor
