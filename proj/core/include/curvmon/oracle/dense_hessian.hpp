#pragma once

#include "curvmon/ad/loss_tape.hpp"

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

namespace curvmon::oracle {

using ad::Matrix;
using ad::ParamPartition;

enum class AssemblyMethod { BasisHvp, FiniteDifference };

enum class Coordinates {
  Parameters,  // P x P shared Hessian
  Leaves,      // one copy per call site of shared groups
};

struct OracleOptions {
  std::size_t cap = 2000;
  double fd_step = 1e-5;
  Coordinates coordinates = Coordinates::Parameters;
};

/// Dense symmetric Hessian with the partition used to slice it.
/// `asymmetry` is ||H - H^T||_F / ||H||_F measured before symmetrisation.
struct DenseHessian {
  Matrix matrix;
  AssemblyMethod source = AssemblyMethod::BasisHvp;
  ParamPartition partition;
  double asymmetry = 0.0;
};

/// Brute-force assembly, column by column. The tape is left evaluated at
/// `params` with a retained gradient.
DenseHessian assemble(ad::LossTape& tape, std::span<const double> params, const ad::Batch& batch,
                      AssemblyMethod method, const OracleOptions& options = {});

constexpr std::size_t kMaxEigenBlock = 512;

struct BlockStats {
  double trace = 0.0;
  double frobenius_sq = 0.0;
  double diag_sq_sum = 0.0;
  /// Ascending; empty when the block is larger than kMaxEigenBlock.
  std::vector<double> eigenvalues;
};

Matrix block(const DenseHessian& h, std::size_t layer);
BlockStats exact_block_stats(const DenseHessian& h, std::size_t layer);
BlockStats exact_block_stats(const Matrix& block);

/// Off-diagonal block H_{layer, other}; layer == other is rejected.
Matrix cross_block(const DenseHessian& h, std::size_t layer, std::size_t other);

/// sum_{k != k'} tr(H_{copy k, copy k'}) over the given leaf groups of a
/// leaf-coordinate Hessian: the part of a shared layer's trace that unrolling drops.
double cross_instance_trace(const DenseHessian& leaf_hessian, std::span<const std::size_t> copies);

/// Row-major little-endian dump: u64 P, u64 L, u64 offsets[L + 1], f64 H[P * P].
void write_binary(const DenseHessian& h, const std::filesystem::path& path);
/// Reads a dump back; group names are not stored and come back as g0, g1, ...
DenseHessian read_binary(const std::filesystem::path& path);

}  // namespace curvmon::oracle
