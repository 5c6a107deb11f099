#include "curvmon/ad/quadratic.hpp"

#include "curvmon/error.hpp"

#include <numeric>

namespace curvmon::ad {

QuadraticModel::QuadraticModel(Matrix a, std::span<const std::size_t> group_sizes, Matrix linear)
    : a_(std::move(a)), c_(std::move(linear)) {
  const auto total = std::accumulate(group_sizes.begin(), group_sizes.end(), std::size_t{0});
  if (a_.rows() != a_.cols() || static_cast<std::size_t>(a_.rows()) != total) {
    throw Error(ErrorCode::ShapeMismatch, "quadratic matrix must be square with side equal to the partition size");
  }
  if (c_.size() == 0) c_ = Matrix::Zero(a_.rows(), 1);
  if (c_.rows() != a_.rows() || c_.cols() != 1) {
    throw Error(ErrorCode::ShapeMismatch, "linear term must be a column of length P");
  }
  Eigen::Index offset = 0;
  for (std::size_t g = 0; g < group_sizes.size(); ++g) {
    const auto n = static_cast<Eigen::Index>(group_sizes[g]);
    groups_.push_back({"g" + std::to_string(g), 1});
    tensors_.push_back({"theta", n, 1, g});
    offsets_.push_back(offset);
    offset += n;
  }
}

Var QuadraticModel::loss(const ParamBinder& params, const Batch&, Tape& tape) const {
  Var total;
  auto accumulate = [&total](Var term) { total = total.valid() ? add(total, term) : term; };
  for (std::size_t g = 0; g < tensors_.size(); ++g) {
    const Var tg = params.use(g);
    for (std::size_t h = 0; h < tensors_.size(); ++h) {
      const Matrix block = a_.block(offsets_[g], offsets_[h], tensors_[g].rows, tensors_[h].rows);
      if (block.isZero(0.0)) continue;
      const Var th = params.use(h);
      accumulate(scale(matmul(transpose(tg), matmul(tape.constant(block), th)), 0.5));
    }
    accumulate(dot(tape.constant(c_.block(offsets_[g], 0, tensors_[g].rows, 1)), tg));
  }
  return total;
}

LinearModel::LinearModel(std::vector<double> coefficients) {
  c_ = Eigen::Map<const Matrix>(coefficients.data(), static_cast<Eigen::Index>(coefficients.size()), 1);
  groups_.push_back({"g0", 1});
  tensors_.push_back({"theta", c_.rows(), 1, 0});
}

Var LinearModel::loss(const ParamBinder& params, const Batch&, Tape& tape) const {
  return dot(tape.constant(c_), params.use(0));
}

}  // namespace curvmon::ad
