#pragma once

#include "curvmon/ad/tape.hpp"

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace curvmon::ad {

enum class SharingMode { Shared, Unrolled };

/// Ordered decomposition of the flat parameter vector into disjoint layer
/// groups. Offsets are contiguous and sizes sum to total().
class ParamPartition {
 public:
  struct Group {
    std::string name;
    std::size_t offset = 0;
    std::size_t size = 0;
    int uses = 1;  // call sites sharing this group
    int site = 0;  // copy index in unrolled coordinates, 0 otherwise

    bool operator==(const Group&) const = default;
  };

  ParamPartition() = default;
  explicit ParamPartition(std::vector<Group> groups);

  /// Consecutive groups with the given sizes, named "g0", "g1", ...
  static ParamPartition from_sizes(std::span<const std::size_t> sizes);

  std::size_t total() const noexcept { return total_; }
  std::size_t layer_count() const noexcept { return groups_.size(); }
  const Group& group(std::size_t layer) const;
  std::span<const Group> groups() const noexcept { return groups_; }

  std::span<const double> slice(std::span<const double> v, std::size_t layer) const;
  std::span<double> slice(std::span<double> v, std::size_t layer) const;

  bool operator==(const ParamPartition&) const = default;

 private:
  std::vector<Group> groups_;
  std::size_t total_ = 0;
};

struct TensorShape {
  std::string name;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  std::size_t group = 0;
};

struct GroupInfo {
  std::string name;
  int uses = 1;
};

/// Mini-batch: inputs are rows. Classification models read `labels`,
/// regression models read `targets`.
struct Batch {
  Matrix inputs;
  std::vector<int> labels;
  Matrix targets;

  std::size_t size() const noexcept { return static_cast<std::size_t>(inputs.rows()); }
  bool empty() const noexcept { return inputs.rows() == 0; }
};

/// Resolves a parameter tensor at one of its call sites to a tape variable.
/// In shared mode every site of a tensor maps to the same leaf.
class ParamBinder {
 public:
  virtual ~ParamBinder() = default;
  virtual Var use(std::size_t tensor, int site = 0) const = 0;
};

/// A differentiable objective over a partitioned parameter vector. Tensors
/// are laid out in declaration order and must be grouped contiguously.
class Model {
 public:
  virtual ~Model() = default;

  virtual std::span<const TensorShape> tensors() const = 0;
  virtual std::span<const GroupInfo> groups() const = 0;

  /// Builds the mean mini-batch loss on `tape`.
  virtual Var loss(const ParamBinder& params, const Batch& batch, Tape& tape) const = 0;

  ParamPartition partition() const;
  /// Coordinates with one copy of every shared group per call site.
  ParamPartition unrolled_partition() const;
  bool has_shared_groups() const;
  int max_uses() const;
  std::size_t parameter_count() const { return partition().total(); }
};

}  // namespace curvmon::ad
