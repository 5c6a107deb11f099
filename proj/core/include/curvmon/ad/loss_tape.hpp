#pragma once

#include "curvmon/ad/model.hpp"
#include "curvmon/ad/tape.hpp"

#include <cstddef>
#include <memory>
#include <span>
#include <vector>

namespace curvmon::ad {

struct TapeCounters {
  std::size_t forward_passes = 0;
  std::size_t gradient_passes = 0;
  std::size_t hvp_calls = 0;      // public hvp() calls
  std::size_t raw_hvp_calls = 0;  // second reverse sweeps actually executed
};

/// Loss of a Model on one mini-batch, recorded for two rounds of
/// reverse-mode differentiation.
///
/// Two coordinate systems exist. The parameter space has dimension P and
/// follows Model::partition(). The leaf space has one copy of every shared
/// group per call site (Model::unrolled_partition()); in shared mode the two
/// coincide. `expand` replicates parameters onto their copies and `collapse`
/// sums copies back, so the shared Hessian is collapse . H_leaf . expand.
///
/// In unrolled mode hvp() drops the cross-instance blocks between distinct
/// copies of the same group; every other entry matches shared mode.
class LossTape {
 public:
  explicit LossTape(const Model& model, SharingMode mode = SharingMode::Shared, double weight_decay = 0.0);

  /// Records L_B(theta) (+ weight_decay * ||theta||^2) and returns its value.
  double forward(std::span<const double> params, const Batch& batch);
  /// As forward() but with independent values per copy (leaf coordinates).
  double forward_leaves(std::span<const double> leaf_params, const Batch& batch);

  /// Gradient in parameter space; copies of a shared group accumulate.
  /// With `retain` the gradient's own record is kept for hvp().
  std::vector<double> gradient(bool retain);
  /// Gradient in leaf coordinates.
  std::vector<double> leaf_gradient(bool retain);

  /// H_B v in parameter space (see class comment for unrolled mode).
  std::vector<double> hvp(std::span<const double> v);
  /// H_leaf u in leaf coordinates, with u and the result of leaf_dim() length.
  std::vector<double> leaf_hvp(std::span<const double> u);

  std::vector<double> expand(std::span<const double> params) const;
  std::vector<double> collapse(std::span<const double> leaf_values) const;

  const Model& model() const noexcept { return *model_; }
  SharingMode mode() const noexcept { return mode_; }
  double weight_decay() const noexcept { return weight_decay_; }
  const ParamPartition& partition() const noexcept { return partition_; }
  const ParamPartition& leaf_partition() const noexcept { return leaf_partition_; }
  std::size_t dim() const noexcept { return partition_.total(); }
  std::size_t leaf_dim() const noexcept { return leaf_partition_.total(); }
  /// Indices into leaf_partition() of the copies of parameter group `group`.
  const std::vector<std::size_t>& copies(std::size_t group) const { return group_copies_.at(group); }

  bool evaluated() const noexcept { return state_ != State::Empty; }
  bool gradient_retained() const noexcept { return state_ == State::Retained; }
  double loss() const;

  const TapeCounters& counters() const noexcept { return counters_; }
  void reset_counters() noexcept { counters_ = {}; }
  const Tape& tape() const noexcept { return *tape_; }

 private:
  enum class State { Empty, Evaluated, Released, Retained };

  struct LeafSlot {
    std::size_t tensor;
    int site;
    std::size_t offset;  // in leaf coordinates
  };

  double build(std::span<const double> leaf_params, const Batch& batch);
  void compute_gradient(bool retain);
  std::vector<double> sweep(std::span<const double> u);

  const Model* model_;
  SharingMode mode_;
  double weight_decay_;
  ParamPartition partition_;
  ParamPartition leaf_partition_;
  std::vector<LeafSlot> slots_;
  std::vector<std::size_t> tensor_offsets_;  // parameter-space offset per tensor
  std::vector<std::vector<std::size_t>> group_copies_;  // leaf groups holding each parameter group

  std::unique_ptr<Tape> tape_ = std::make_unique<Tape>();
  std::vector<Var> leaves_;
  std::vector<Var> grads_;
  Var loss_;
  std::size_t loss_mark_ = 0;
  std::vector<double> grad_values_;
  State state_ = State::Empty;
  TapeCounters counters_;
};

}  // namespace curvmon::ad
