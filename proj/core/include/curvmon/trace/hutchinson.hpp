#pragma once

#include "curvmon/ad/loss_tape.hpp"
#include "curvmon/ad/network.hpp"
#include "curvmon/oracle/dense_hessian.hpp"
#include "curvmon/trace/probes.hpp"

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace curvmon::trace {

/// A Monte-Carlo mean together with the per-probe samples it came from.
struct BlockEstimate {
  double estimate = 0.0;
  std::vector<double> samples;

  /// Unbiased sample variance of the samples; 0 when K = 1.
  double sample_variance() const;
  /// sqrt(sample_variance / K)
  double standard_error() const;
};

/// Evaluates the tape at (params, batch) and keeps the gradient for HVPs.
void prepare(ad::LossTape& tape, std::span<const double> params, const ad::Batch& batch);

/// Per-layer Hutchinson estimate: probe k is the layer-`layer` slice of the
/// full-dimension probe k (zero elsewhere) and contributes <z_l, (H z)_l>.
BlockEstimate hutchinson_trace_block(ad::LossTape& tape, std::span<const double> params, const ad::Batch& batch,
                                     std::size_t layer, const ProbeBatch& probes);

/// mean_k ||(H z_k)_l||^2 with z_k supported on layer l; unbiased for ||H_l||_F^2.
BlockEstimate frobenius_norm_sq(ad::LossTape& tape, std::span<const double> params, const ad::Batch& batch,
                                std::size_t layer, const ProbeBatch& probes);

struct SnapshotMeta {
  std::string run_id;
  std::uint64_t step = 0;
  int epoch = 0;
  std::uint64_t batch_id = 0;
  double eta = 0.0;
};

struct TraceSnapshot {
  SnapshotMeta meta;
  std::size_t K = 0;
  std::uint64_t seed = 0;
  double loss = 0.0;
  std::vector<std::string> layers;
  std::vector<double> estimates;                  // T_l hat, one per layer
  std::vector<std::vector<double>> probe_values;  // [layer][probe]
};

/// <z_l, (H z)_l> for every layer from one HVP; the tape must be prepared.
std::vector<double> layer_quadratic_forms(ad::LossTape& tape, std::span<const double> z);

/// All layer traces from one retained gradient and K full-dimension HVPs.
TraceSnapshot single_pass_traces(ad::LossTape& tape, std::span<const double> params, const ad::Batch& batch,
                                 const ProbeBatch& probes, const SnapshotMeta& meta = {});

struct UnrollingBias {
  std::size_t group = 0;
  int uses = 1;
  std::size_t K = 0;
  double shared_estimate = 0.0;
  double unrolled_estimate = 0.0;
  double gap = 0.0;  // shared - unrolled, paired over identical probes
  double gap_standard_error = 0.0;
  double oracle_gap = 0.0;  // sum over k != k' of tr(H_{copy k, copy k'})
  bool within_error = false;  // |gap - oracle_gap| <= 4 standard errors
};

/// Shared versus unrolled estimate of one group's trace against the dense
/// cross-instance oracle. A group used once has no cross-instance blocks and
/// returns a zero gap without building an unrolled tape.
UnrollingBias unrolling_bias_experiment(const ad::Model& model, std::span<const double> params,
                                        const ad::Batch& batch, std::size_t group, const ProbeBatch& probes,
                                        const oracle::OracleOptions& options = {});
/// Uses the network's first tied layer; errors when there is none.
UnrollingBias unrolling_bias_experiment(const ad::Network& network, std::span<const double> params,
                                        const ad::Batch& batch, const ProbeBatch& probes,
                                        const oracle::OracleOptions& options = {});

}  // namespace curvmon::trace
