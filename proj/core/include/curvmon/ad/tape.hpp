#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace curvmon::ad {

using Matrix = Eigen::MatrixXd;

enum class Op : std::uint8_t {
  Leaf,
  Constant,
  Add,
  Sub,
  Mul,
  Affine,         // a * x + b, scalars a and b
  MatMul,
  Transpose,
  Sum,            // r x c -> 1 x 1
  Broadcast,      // 1 x 1 -> r x c
  SumRows,        // r x c -> 1 x c
  BroadcastRows,  // 1 x c -> r x c
  RowSum,         // r x c -> r x 1
  BroadcastCols,  // r x 1 -> r x c
  Tanh,
  Sigmoid,
  Softplus,
  Relu,
  Step,           // derivative of relu; zero derivative everywhere
  LogSumExpRows,  // r x c -> r x 1
  SoftmaxRows,
  SoftmaxCrossEntropy,  // (logits, one-hot) -> mean over rows
  MeanSquaredError,     // (prediction, target) -> sum of squares / rows
};

std::string_view op_name(Op op) noexcept;

class Tape;

/// Lightweight handle to a node on a Tape. Copyable; does not own the node.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::int32_t id) : tape_(tape), id_(id) {}

  std::int32_t id() const noexcept { return id_; }
  Tape* tape() const noexcept { return tape_; }
  bool valid() const noexcept { return tape_ != nullptr && id_ >= 0; }

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const;

 private:
  Tape* tape_ = nullptr;
  std::int32_t id_ = -1;
};

/// Define-by-run computation record. Node values are computed eagerly when a
/// node is appended; the record is append-only and nodes are therefore in
/// topological order. `grad` appends the adjoint computation to the same
/// record using differentiable primitives only, so the result can itself be
/// differentiated again (reverse-over-reverse).
class Tape {
 public:
  struct Node {
    Op op = Op::Constant;
    std::array<std::int32_t, 2> inputs{-1, -1};
    Matrix value;
    double a = 0.0;
    double b = 0.0;
    bool requires_grad = false;
    std::string label;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  Var leaf(Matrix value, std::string label = {});
  Var constant(Matrix value, std::string label = {});

  /// Reverse-mode adjoints of the 1x1 node `output` with respect to `wrt`.
  /// Entries for inputs that `output` does not depend on are zero constants.
  std::vector<Var> grad(Var output, std::span<const Var> wrt);

  std::size_t size() const noexcept { return nodes_.size(); }
  /// Drop every node with index >= mark.
  void truncate(std::size_t mark);
  void clear() { nodes_.clear(); }

  const Node& node(std::int32_t id) const;
  void set_leaf_value(Var leaf, const Matrix& value);

  /// First node at or after `from` holding a non-finite value, or -1.
  std::int32_t first_non_finite(std::size_t from = 0) const;

  // Primitive constructors; free functions below forward here.
  Var append(Op op, Var lhs, Var rhs, Matrix value, double a = 0.0, double b = 0.0);

 private:
  void vjp(std::int32_t id, Var adjoint, std::vector<Var>& adjoints, const std::vector<char>& reach);
  void accumulate(std::vector<Var>& adjoints, std::int32_t target, Var contribution);

  std::vector<Node> nodes_;
};

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var affine(Var x, double scale, double shift);
Var scale(Var x, double s);
Var matmul(Var a, Var b);
Var transpose(Var x);
Var sum(Var x);
Var broadcast(Var scalar, Eigen::Index rows, Eigen::Index cols);
Var sum_rows(Var x);
Var broadcast_rows(Var row, Eigen::Index rows);
Var row_sum(Var x);
Var broadcast_cols(Var col, Eigen::Index cols);
Var tanh(Var x);
Var sigmoid(Var x);
Var softplus(Var x);
Var relu(Var x);
Var step(Var x);
Var log_sum_exp_rows(Var x);
Var softmax_rows(Var x);
Var softmax_cross_entropy(Var logits, Var one_hot);
Var mean_squared_error(Var prediction, Var target);
/// sum(a .* b)
Var dot(Var a, Var b);

}  // namespace curvmon::ad
