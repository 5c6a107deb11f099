#include "curvmon/trace/hutchinson.hpp"

#include "curvmon/error.hpp"

#include <cmath>
#include <numeric>

namespace curvmon::trace {

namespace {

double mean(std::span<const double> v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double variance(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return ss / static_cast<double>(v.size() - 1);
}

void require_finite(double q, std::size_t k, std::size_t layer, const char* what) {
  if (!std::isfinite(q)) {
    throw Error(ErrorCode::NonFinite, std::string(what) + " is non-finite for probe " + std::to_string(k) +
                                          " on layer " + std::to_string(layer));
  }
}

// HVP failures are re-raised with the probe that triggered them.
std::vector<double> probe_hvp(ad::LossTape& tape, std::span<const double> z, std::size_t k) {
  try {
    return tape.hvp(z);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::NonFinite) throw;
    throw Error(ErrorCode::NonFinite, "probe " + std::to_string(k) + ": " + e.detail());
  }
}

template <typename Reduce>
BlockEstimate probe_layer(ad::LossTape& tape, std::span<const double> params, const ad::Batch& batch,
                          std::size_t layer, const ProbeBatch& probes, const char* what, Reduce reduce) {
  prepare(tape, params, batch);
  const auto& g = tape.partition().group(layer);
  std::vector<double> z(tape.dim(), 0.0);
  const std::span<double> zl = std::span<double>(z).subspan(g.offset, g.size);
  BlockEstimate out;
  out.samples.reserve(probes.count());
  for (std::size_t k = 0; k < probes.count(); ++k) {
    probes.fill(k, g.offset, zl);
    const auto w = probe_hvp(tape, z, k);
    const double q = reduce(zl, std::span<const double>(w).subspan(g.offset, g.size));
    require_finite(q, k, layer, what);
    out.samples.push_back(q);
  }
  out.estimate = mean(out.samples);
  return out;
}

}  // namespace

double BlockEstimate::sample_variance() const { return variance(samples); }

double BlockEstimate::standard_error() const {
  return samples.empty() ? 0.0 : std::sqrt(sample_variance() / static_cast<double>(samples.size()));
}

void prepare(ad::LossTape& tape, std::span<const double> params, const ad::Batch& batch) {
  tape.forward(params, batch);
  tape.gradient(true);
}

BlockEstimate hutchinson_trace_block(ad::LossTape& tape, std::span<const double> params, const ad::Batch& batch,
                                     std::size_t layer, const ProbeBatch& probes) {
  return probe_layer(tape, params, batch, layer, probes, "quadratic form",
                     [](std::span<const double> z, std::span<const double> w) {
                       return std::inner_product(z.begin(), z.end(), w.begin(), 0.0);
                     });
}

BlockEstimate frobenius_norm_sq(ad::LossTape& tape, std::span<const double> params, const ad::Batch& batch,
                                std::size_t layer, const ProbeBatch& probes) {
  return probe_layer(tape, params, batch, layer, probes, "squared norm",
                     [](std::span<const double>, std::span<const double> w) {
                       return std::inner_product(w.begin(), w.end(), w.begin(), 0.0);
                     });
}

std::vector<double> layer_quadratic_forms(ad::LossTape& tape, std::span<const double> z) {
  const auto w = tape.hvp(z);
  const auto& part = tape.partition();
  std::vector<double> q(part.layer_count(), 0.0);
  for (std::size_t l = 0; l < part.layer_count(); ++l) {
    const auto& g = part.group(l);
    for (std::size_t i = g.offset; i < g.offset + g.size; ++i) q[l] += z[i] * w[i];
  }
  return q;
}

TraceSnapshot single_pass_traces(ad::LossTape& tape, std::span<const double> params, const ad::Batch& batch,
                                 const ProbeBatch& probes, const SnapshotMeta& meta) {
  prepare(tape, params, batch);
  const auto& part = tape.partition();
  const std::size_t layers = part.layer_count();

  TraceSnapshot snap;
  snap.meta = meta;
  snap.K = probes.count();
  snap.seed = probes.seed();
  snap.loss = tape.loss();
  for (const auto& g : part.groups()) snap.layers.push_back(g.name);
  snap.probe_values.assign(layers, std::vector<double>(probes.count()));

  std::vector<double> z(tape.dim());
  for (std::size_t k = 0; k < probes.count(); ++k) {
    probes.fill(k, 0, z);
    std::vector<double> q;
    try {
      q = layer_quadratic_forms(tape, z);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NonFinite) throw;
      throw Error(ErrorCode::NonFinite, "probe " + std::to_string(k) + ": " + e.detail());
    }
    for (std::size_t l = 0; l < layers; ++l) {
      require_finite(q[l], k, l, "quadratic form");
      snap.probe_values[l][k] = q[l];
    }
  }
  for (const auto& vals : snap.probe_values) snap.estimates.push_back(mean(vals));
  return snap;
}

UnrollingBias unrolling_bias_experiment(const ad::Model& model, std::span<const double> params,
                                        const ad::Batch& batch, std::size_t group, const ProbeBatch& probes,
                                        const oracle::OracleOptions& options) {
  const auto part = model.partition();
  const auto& g = part.group(group);

  UnrollingBias out;
  out.group = group;
  out.uses = g.uses;
  out.K = probes.count();

  ad::LossTape shared(model);
  const auto s = hutchinson_trace_block(shared, params, batch, group, probes);
  out.shared_estimate = s.estimate;
  if (g.uses < 2) {
    out.unrolled_estimate = s.estimate;
    out.within_error = true;
    return out;
  }

  ad::LossTape unrolled(model, ad::SharingMode::Unrolled);
  const auto u = hutchinson_trace_block(unrolled, params, batch, group, probes);
  out.unrolled_estimate = u.estimate;
  BlockEstimate diff;
  for (std::size_t k = 0; k < probes.count(); ++k) diff.samples.push_back(s.samples[k] - u.samples[k]);
  diff.estimate = mean(diff.samples);
  out.gap = diff.estimate;
  out.gap_standard_error = diff.standard_error();

  oracle::OracleOptions leaf = options;
  leaf.coordinates = oracle::Coordinates::Leaves;
  const auto h = oracle::assemble(unrolled, params, batch, oracle::AssemblyMethod::BasisHvp, leaf);
  out.oracle_gap = oracle::cross_instance_trace(h, unrolled.copies(group));

  const double err = std::abs(out.gap - out.oracle_gap);
  out.within_error = out.gap_standard_error > 0.0 ? err <= 4.0 * out.gap_standard_error
                                                  : err <= 1e-9 * std::max(1.0, std::abs(out.oracle_gap));
  return out;
}

UnrollingBias unrolling_bias_experiment(const ad::Network& network, std::span<const double> params,
                                        const ad::Batch& batch, const ProbeBatch& probes,
                                        const oracle::OracleOptions& options) {
  const auto& layers = network.spec().layers;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].kind == ad::LayerSpec::Kind::Tied) {
      return unrolling_bias_experiment(network, params, batch, i, probes, options);
    }
  }
  throw Error(ErrorCode::InvalidArgument,
              "model '" + network.spec().name + "' has no tied weights; the unrolling experiment needs one");
}

}  // namespace curvmon::trace
