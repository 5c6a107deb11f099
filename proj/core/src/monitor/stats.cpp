#include "curvmon/monitor/stats.hpp"

#include "curvmon/error.hpp"
#include "curvmon/rng.hpp"

#include <algorithm>
#include <cmath>

namespace curvmon::monitor {

namespace {

struct Moments {
  double mean = 0.0;
  double var = 0.0;  // divisor n - 1
};

template <typename Get>
Moments moments(std::size_t n, Get get) {
  Moments m;
  for (std::size_t i = 0; i < n; ++i) m.mean += get(i);
  m.mean /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) m.var += (get(i) - m.mean) * (get(i) - m.mean);
  m.var /= static_cast<double>(n - 1);
  return m;
}

std::optional<double> d_of(const Moments& a, const Moments& b) {
  const double pooled = 0.5 * (a.var + b.var);
  if (!(pooled > 0.0)) return std::nullopt;
  return (a.mean - b.mean) / std::sqrt(pooled);
}

Interval percentile(std::vector<double>& reps) {
  std::sort(reps.begin(), reps.end());
  auto q = [&](double p) {
    const double pos = p * static_cast<double>(reps.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, reps.size() - 1);
    return reps[lo] + (pos - static_cast<double>(lo)) * (reps[hi] - reps[lo]);
  };
  return {q(0.025), q(0.975)};
}

struct LagSums {
  double num = 0.0;
  double den = 0.0;
  std::size_t pairs = 0;
};

std::optional<double> rho_of(std::span<const std::vector<double>> seqs, std::span<const std::size_t> pick,
                             std::size_t* pairs = nullptr) {
  double mean = 0.0, count = 0.0;
  for (std::size_t i : pick)
    for (double x : seqs[i]) {
      mean += x;
      count += 1.0;
    }
  mean /= count;
  LagSums s;
  for (std::size_t i : pick) {
    const auto& z = seqs[i];
    for (std::size_t t = 0; t < z.size(); ++t) {
      s.den += (z[t] - mean) * (z[t] - mean);
      if (t + 1 < z.size()) {
        s.num += (z[t] - mean) * (z[t + 1] - mean);
        ++s.pairs;
      }
    }
  }
  if (pairs) *pairs = s.pairs;
  if (!(s.den > 0.0)) return std::nullopt;
  return s.num / s.den;
}

}  // namespace

Interval wilson_interval(std::size_t successes, std::size_t trials, double z) {
  if (trials == 0) throw Error(ErrorCode::InvalidArgument, "Wilson interval needs at least one trial");
  if (successes > trials) throw Error(ErrorCode::InvalidArgument, "more successes than trials");
  const double n = static_cast<double>(trials);
  const double p = static_cast<double>(successes) / n;
  const double z2 = z * z;
  const double centre = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
  const double half = z / (1.0 + z2 / n) * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n));
  return {std::max(0.0, centre - half), std::min(1.0, centre + half)};
}

EffectSize cohens_d(std::span<const double> clean, std::span<const double> noisy, const BootstrapSpec& bootstrap) {
  if (clean.size() < 2 || noisy.size() < 2) {
    throw Error(ErrorCode::InvalidArgument, "Cohen's d needs at least two samples per arm");
  }
  EffectSize e;
  e.n_clean = clean.size();
  e.n_noisy = noisy.size();
  const auto a = moments(clean.size(), [&](std::size_t i) { return clean[i]; });
  const auto b = moments(noisy.size(), [&](std::size_t i) { return noisy[i]; });
  e.mean_clean = a.mean;
  e.mean_noisy = b.mean;
  e.sd_clean = std::sqrt(a.var);
  e.sd_noisy = std::sqrt(b.var);
  e.d = d_of(a, b);
  if (!e.d || bootstrap.replicates == 0) return e;

  std::vector<double> reps;
  reps.reserve(bootstrap.replicates);
  std::vector<double> ra(clean.size()), rb(noisy.size());
  for (std::size_t r = 0; r < bootstrap.replicates; ++r) {
    CounterRng rng(bootstrap.seed, 0xc0e7d5ULL, r);
    for (auto& x : ra) x = clean[static_cast<std::size_t>(rng.below(clean.size()))];
    for (auto& x : rb) x = noisy[static_cast<std::size_t>(rng.below(noisy.size()))];
    const auto ma = moments(ra.size(), [&](std::size_t i) { return ra[i]; });
    const auto mb = moments(rb.size(), [&](std::size_t i) { return rb[i]; });
    if (const auto d = d_of(ma, mb)) reps.push_back(*d);
  }
  if (reps.size() >= 2) e.ci = percentile(reps);
  return e;
}

Autocorrelation autocorr_lag1(std::span<const std::vector<double>> sequences, const BootstrapSpec& bootstrap) {
  if (sequences.empty()) throw Error(ErrorCode::InvalidArgument, "autocorrelation needs at least one sequence");
  for (const auto& s : sequences) {
    if (s.size() < 10) throw Error(ErrorCode::InvalidArgument, "autocorrelation sequences need at least 10 points");
  }
  std::vector<std::size_t> all(sequences.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  Autocorrelation out;
  out.rho = rho_of(sequences, all, &out.pairs);
  if (!out.rho || bootstrap.replicates == 0) return out;

  std::vector<double> reps;
  std::vector<std::size_t> pick(sequences.size());
  for (std::size_t r = 0; r < bootstrap.replicates; ++r) {
    CounterRng rng(bootstrap.seed, 0xac1ULL, r);
    for (auto& i : pick) i = static_cast<std::size_t>(rng.below(sequences.size()));
    if (const auto rho = rho_of(sequences, pick)) reps.push_back(*rho);
  }
  if (reps.size() >= 2) out.ci = percentile(reps);
  return out;
}

nlohmann::json to_json(const Interval& i) { return nlohmann::json::array({i.lower, i.upper}); }

nlohmann::json to_json(const EffectSize& e) {
  nlohmann::json j;
  j["layer"] = e.layer;
  j["eta"] = e.eta;
  j["d"] = e.d ? nlohmann::json(*e.d) : nlohmann::json(nullptr);
  if (!e.d) j["d_status"] = "undefined: zero pooled variance";
  j["ci"] = e.ci ? to_json(*e.ci) : nlohmann::json(nullptr);
  j["window"] = {e.window.first, e.window.second};
  j["n_clean"] = e.n_clean;
  j["n_noisy"] = e.n_noisy;
  j["mean_clean"] = e.mean_clean;
  j["mean_noisy"] = e.mean_noisy;
  j["sd_clean"] = e.sd_clean;
  j["sd_noisy"] = e.sd_noisy;
  return j;
}

nlohmann::json to_json(const Autocorrelation& a) {
  nlohmann::json j;
  j["rho"] = a.rho ? nlohmann::json(*a.rho) : nlohmann::json(nullptr);
  if (!a.rho) j["rho_status"] = "undefined: constant input";
  j["ci"] = a.ci ? to_json(*a.ci) : nlohmann::json(nullptr);
  j["pairs"] = a.pairs;
  return j;
}

}  // namespace curvmon::monitor
