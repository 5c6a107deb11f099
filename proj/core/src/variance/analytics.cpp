#include "curvmon/variance/analytics.hpp"

#include "curvmon/error.hpp"
#include "curvmon/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

namespace curvmon::variance {

namespace {

struct BatchMoments {
  double mean = 0.0;
  double var = 0.0;           // unbiased, over probes
  double var_of_mean = 0.0;   // var / K
};

struct Pooled {
  double v_h1 = 0.0;
  double v_b_raw = 0.0;
  double v_b = 0.0;
};

Pooled pool(std::span<const BatchMoments> m, std::span<const std::size_t> pick) {
  const auto n = static_cast<double>(pick.size());
  Pooled p;
  double mean_of_means = 0.0;
  double noise = 0.0;
  for (std::size_t i : pick) {
    p.v_h1 += m[i].var;
    mean_of_means += m[i].mean;
    noise += m[i].var_of_mean;
  }
  p.v_h1 /= n;
  mean_of_means /= n;
  noise /= n;
  for (std::size_t i : pick) p.v_b_raw += (m[i].mean - mean_of_means) * (m[i].mean - mean_of_means);
  p.v_b_raw /= n - 1.0;
  p.v_b = p.v_b_raw - noise;
  return p;
}

double quantile(std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

const char* provenance_name(Provenance p) { return p == Provenance::Oracle ? "oracle" : "estimated"; }

nlohmann::json optional_number(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace

double variance_fixed_hessian(double frobenius_sq, double diag_sq_sum, std::size_t K) {
  if (K == 0) throw Error(ErrorCode::InvalidArgument, "probe count K must be at least 1");
  if (frobenius_sq < 0.0 || diag_sq_sum < 0.0) {
    throw Error(ErrorCode::InvalidArgument, "Frobenius and diagonal square sums must be non-negative");
  }
  // Floating-point cancellation can leave a tiny negative residue for diagonal blocks.
  return 2.0 / static_cast<double>(K) * std::max(0.0, frobenius_sq - diag_sq_sum);
}

double variance_upper_bound(double frobenius_sq, std::size_t K) { return variance_fixed_hessian(frobenius_sq, 0.0, K); }

std::optional<double> anisotropy(double frobenius_sq, double trace) {
  if (frobenius_sq < 0.0) throw Error(ErrorCode::InvalidArgument, "Frobenius square sum must be non-negative");
  if (trace == 0.0) return std::nullopt;
  return std::sqrt(frobenius_sq) / std::abs(trace);
}

double relative_error_bound(double kappa, std::size_t K) {
  if (K == 0) throw Error(ErrorCode::InvalidArgument, "probe count K must be at least 1");
  return std::sqrt(2.0 / static_cast<double>(K)) * kappa;
}

KStarEstimate k_star(std::span<const std::vector<double>> samples, const BootstrapOptions& bootstrap) {
  if (samples.size() < 2) throw Error(ErrorCode::InvalidArgument, "K* needs at least two batches");
  std::vector<BatchMoments> m;
  KStarEstimate out;
  out.batches = samples.size();
  out.probes_per_batch = std::numeric_limits<std::size_t>::max();
  for (std::size_t b = 0; b < samples.size(); ++b) {
    const auto& s = samples[b];
    if (s.size() < 2) {
      throw Error(ErrorCode::InvalidArgument, "batch " + std::to_string(b) + " has fewer than two probes");
    }
    out.probes_per_batch = std::min(out.probes_per_batch, s.size());
    BatchMoments bm;
    for (double x : s) bm.mean += x;
    bm.mean /= static_cast<double>(s.size());
    for (double x : s) bm.var += (x - bm.mean) * (x - bm.mean);
    bm.var /= static_cast<double>(s.size() - 1);
    bm.var_of_mean = bm.var / static_cast<double>(s.size());
    m.push_back(bm);
  }

  std::vector<std::size_t> all(m.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const Pooled p = pool(m, all);
  out.v_h1 = p.v_h1;
  out.v_b_raw = p.v_b_raw;
  out.v_b = p.v_b;
  if (p.v_b > 0.0) out.k_star = p.v_h1 / p.v_b;

  if (bootstrap.replicates > 0) {
    std::vector<double> reps;
    std::vector<std::size_t> pick(m.size());
    for (std::size_t r = 0; r < bootstrap.replicates; ++r) {
      CounterRng rng(bootstrap.seed, 0x6b73746172ULL, r);
      for (auto& i : pick) i = static_cast<std::size_t>(rng.below(m.size()));
      const Pooled q = pool(m, pick);
      if (q.v_b > 0.0) reps.push_back(q.v_h1 / q.v_b);
    }
    out.ci_defined_fraction = static_cast<double>(reps.size()) / static_cast<double>(bootstrap.replicates);
    if (reps.size() >= 2) {
      std::sort(reps.begin(), reps.end());
      const double tail = (1.0 - bootstrap.level) / 2.0;
      out.ci = Interval{quantile(reps, tail), quantile(reps, 1.0 - tail)};
    }
  }
  return out;
}

KStarEstimate k_star(std::span<const trace::TraceSnapshot> snapshots, std::size_t layer,
                     const BootstrapOptions& bootstrap) {
  std::vector<std::vector<double>> samples;
  for (const auto& s : snapshots) {
    if (layer >= s.probe_values.size()) {
      throw Error(ErrorCode::InvalidArgument, "snapshot at step " + std::to_string(s.meta.step) + " has no layer " +
                                                  std::to_string(layer));
    }
    samples.push_back(s.probe_values[layer]);
  }
  return k_star(samples, bootstrap);
}

VarianceReport report_from_oracle(const oracle::DenseHessian& h, std::size_t K) {
  VarianceReport r;
  for (std::size_t l = 0; l < h.partition.layer_count(); ++l) {
    const auto stats = oracle::exact_block_stats(h, l);
    LayerVariance lv;
    lv.layer = l;
    lv.name = h.partition.group(l).name;
    lv.K = K;
    lv.trace = stats.trace;
    lv.frobenius_sq = stats.frobenius_sq;
    lv.diag_sq_sum = stats.diag_sq_sum;
    lv.var_fixed_h = variance_fixed_hessian(stats.frobenius_sq, stats.diag_sq_sum, K);
    lv.var_source = Provenance::Oracle;
    lv.kappa = anisotropy(stats.frobenius_sq, stats.trace);
    if (lv.kappa) lv.rel_error_bound = relative_error_bound(*lv.kappa, K);
    r.layers.push_back(std::move(lv));
  }
  return r;
}

LayerVariance layer_from_estimates(std::size_t layer, std::string name, double trace, double frobenius_sq,
                                   std::size_t K) {
  LayerVariance lv;
  lv.layer = layer;
  lv.name = std::move(name);
  lv.K = K;
  lv.trace = trace;
  lv.frobenius_sq = std::max(0.0, frobenius_sq);
  lv.var_fixed_h = variance_upper_bound(lv.frobenius_sq, K);
  lv.var_source = Provenance::Estimated;
  lv.kappa = anisotropy(lv.frobenius_sq, trace);
  if (lv.kappa) lv.rel_error_bound = relative_error_bound(*lv.kappa, K);
  return lv;
}

nlohmann::json to_json(const KStarEstimate& k) {
  nlohmann::json j;
  j["batches"] = k.batches;
  j["probes_per_batch"] = k.probes_per_batch;
  j["v_h1"] = k.v_h1;
  j["v_b_raw"] = k.v_b_raw;
  j["v_b"] = k.v_b;
  j["k_star"] = optional_number(k.k_star);
  j["status"] = k.k_star ? "ok" : "batch-noise below resolution";
  j["ci"] = k.ci ? nlohmann::json::array({k.ci->lower, k.ci->upper}) : nlohmann::json(nullptr);
  j["ci_defined_fraction"] = k.ci_defined_fraction;
  return j;
}

nlohmann::json to_json(const VarianceReport& report) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : report.layers) {
    nlohmann::json j;
    j["layer"] = l.layer;
    j["name"] = l.name;
    j["K"] = l.K;
    j["trace"] = l.trace;
    j["frobenius_sq"] = l.frobenius_sq;
    j["diag_sq_sum"] = optional_number(l.diag_sq_sum);
    j["var_fixed_h"] = l.var_fixed_h;
    j["kappa"] = optional_number(l.kappa);
    if (!l.kappa) j["kappa_status"] = "saddle-degenerate";
    j["rel_error_bound"] = optional_number(l.rel_error_bound);
    j["k_star"] = l.k_star ? to_json(*l.k_star) : nlohmann::json(nullptr);
    j["provenance"] = {
        {"var_fixed_h", l.var_source == Provenance::Oracle ? "oracle: exact diagonal square sum"
                                                            : "estimated: diagonal term dropped (upper bound)"},
        {"trace", provenance_name(l.var_source)},
        {"v_h1", "mean of per-batch probe sample variances"},
        {"v_b", "across-batch variance of mean traces minus mean(s_b^2 / K_b)"},
    };
    layers.push_back(std::move(j));
  }
  return {{"layers", layers}};
}

std::string format_table(const VarianceReport& report) {
  std::string out;
  char line[256];
  std::snprintf(line, sizeof line, "%-10s %6s %14s %14s %14s %10s %10s %10s\n", "layer", "K", "trace", "frob_sq",
                "var_fixed_H", "kappa", "bound", "K*");
  out += line;
  for (const auto& l : report.layers) {
    auto num = [](const std::optional<double>& v, const char* fallback) {
      char buf[32];
      if (v) std::snprintf(buf, sizeof buf, "%.4g", *v);
      else std::snprintf(buf, sizeof buf, "%s", fallback);
      return std::string(buf);
    };
    const std::optional<double> ks = l.k_star ? l.k_star->k_star : std::nullopt;
    std::snprintf(line, sizeof line, "%-10s %6zu %14.6g %14.6g %14.6g %10s %10s %10s\n", l.name.c_str(), l.K, l.trace,
                  l.frobenius_sq, l.var_fixed_h, num(l.kappa, "saddle").c_str(),
                  num(l.rel_error_bound, "-").c_str(), num(ks, "-").c_str());
    out += line;
  }
  return out;
}

}  // namespace curvmon::variance
