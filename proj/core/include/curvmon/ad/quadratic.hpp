#pragma once

#include "curvmon/ad/model.hpp"

#include <span>
#include <vector>

namespace curvmon::ad {

/// L(theta) = 1/2 theta^T A theta + c^T theta over a partitioned vector.
/// The Hessian is sym(A) exactly, which makes this the reference objective
/// for estimator tests. The batch argument is ignored.
class QuadraticModel final : public Model {
 public:
  QuadraticModel(Matrix a, std::span<const std::size_t> group_sizes, Matrix linear = {});

  std::span<const TensorShape> tensors() const override { return tensors_; }
  std::span<const GroupInfo> groups() const override { return groups_; }
  Var loss(const ParamBinder& params, const Batch& batch, Tape& tape) const override;

  const Matrix& matrix() const noexcept { return a_; }

 private:
  Matrix a_;
  Matrix c_;
  std::vector<TensorShape> tensors_;
  std::vector<GroupInfo> groups_;
  std::vector<Eigen::Index> offsets_;
};

/// L(theta) = c^T theta; zero Hessian.
class LinearModel final : public Model {
 public:
  explicit LinearModel(std::vector<double> coefficients);

  std::span<const TensorShape> tensors() const override { return tensors_; }
  std::span<const GroupInfo> groups() const override { return groups_; }
  Var loss(const ParamBinder& params, const Batch& batch, Tape& tape) const override;

 private:
  Matrix c_;
  std::vector<TensorShape> tensors_;
  std::vector<GroupInfo> groups_;
};

}  // namespace curvmon::ad
