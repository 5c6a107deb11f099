#include "curvmon/ad/tape.hpp"

#include "curvmon/error.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace curvmon::ad {

std::string_view op_name(Op op) noexcept {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Constant: return "constant";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Affine: return "affine";
    case Op::MatMul: return "matmul";
    case Op::Transpose: return "transpose";
    case Op::Sum: return "sum";
    case Op::Broadcast: return "broadcast";
    case Op::SumRows: return "sum_rows";
    case Op::BroadcastRows: return "broadcast_rows";
    case Op::RowSum: return "row_sum";
    case Op::BroadcastCols: return "broadcast_cols";
    case Op::Tanh: return "tanh";
    case Op::Sigmoid: return "sigmoid";
    case Op::Softplus: return "softplus";
    case Op::Relu: return "relu";
    case Op::Step: return "step";
    case Op::LogSumExpRows: return "log_sum_exp_rows";
    case Op::SoftmaxRows: return "softmax_rows";
    case Op::SoftmaxCrossEntropy: return "softmax_cross_entropy";
    case Op::MeanSquaredError: return "mean_squared_error";
  }
  return "?";
}

namespace {

std::string describe(const Var& v) {
  std::ostringstream os;
  const auto& n = v.tape()->node(v.id());
  os << "node " << v.id() << " (" << op_name(n.op);
  if (!n.label.empty()) os << " '" << n.label << "'";
  os << ", " << n.value.rows() << "x" << n.value.cols() << ")";
  return os.str();
}

[[noreturn]] void shape_error(Op op, const Var& a, const Var& b) {
  std::ostringstream os;
  os << op_name(op) << ": incompatible operands " << describe(a);
  if (b.valid()) os << " and " << describe(b);
  throw Error(ErrorCode::ShapeMismatch, os.str());
}

Tape& tape_of(const Var& a) {
  if (!a.valid()) throw Error(ErrorCode::InvalidArgument, "operation on an empty Var");
  return *a.tape();
}

Tape& tape_of(const Var& a, const Var& b) {
  Tape& t = tape_of(a);
  if (b.tape() != &t) throw Error(ErrorCode::InvalidArgument, "operands live on different tapes");
  return t;
}

void require_same_shape(Op op, const Var& a, const Var& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_error(op, a, b);
}

Matrix softmax_value(const Matrix& x) {
  Matrix s(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double m = x.row(i).maxCoeff();
    s.row(i) = (x.row(i).array() - m).exp().matrix();
    s.row(i) /= s.row(i).sum();
  }
  return s;
}

Matrix lse_value(const Matrix& x) {
  Matrix out(x.rows(), 1);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double m = x.row(i).maxCoeff();
    out(i, 0) = m + std::log((x.row(i).array() - m).exp().sum());
  }
  return out;
}

double stable_sigmoid(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

Matrix scalar_matrix(double v) {
  Matrix m(1, 1);
  m(0, 0) = v;
  return m;
}

}  // namespace

const Matrix& Var::value() const { return tape_->node(id_).value; }

double Var::scalar() const {
  const Matrix& v = value();
  if (v.size() != 1) throw Error(ErrorCode::ShapeMismatch, "scalar() on " + describe(*this));
  return v(0, 0);
}

Var Tape::leaf(Matrix value, std::string label) {
  Node n;
  n.op = Op::Leaf;
  n.value = std::move(value);
  n.requires_grad = true;
  n.label = std::move(label);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<std::int32_t>(nodes_.size() - 1));
}

Var Tape::constant(Matrix value, std::string label) {
  Node n;
  n.op = Op::Constant;
  n.value = std::move(value);
  n.label = std::move(label);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<std::int32_t>(nodes_.size() - 1));
}

Var Tape::append(Op op, Var lhs, Var rhs, Matrix value, double a, double b) {
  Node n;
  n.op = op;
  n.inputs = {lhs.valid() ? lhs.id() : -1, rhs.valid() ? rhs.id() : -1};
  n.value = std::move(value);
  n.a = a;
  n.b = b;
  n.requires_grad = (lhs.valid() && nodes_[lhs.id()].requires_grad) ||
                    (rhs.valid() && nodes_[rhs.id()].requires_grad);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<std::int32_t>(nodes_.size() - 1));
}

const Tape::Node& Tape::node(std::int32_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) {
    throw Error(ErrorCode::InvalidArgument, "node id " + std::to_string(id) + " out of range");
  }
  return nodes_[id];
}

void Tape::set_leaf_value(Var leaf, const Matrix& value) {
  Node& n = nodes_.at(leaf.id());
  if (n.op != Op::Leaf) throw Error(ErrorCode::InvalidArgument, "set_leaf_value on non-leaf " + describe(leaf));
  if (n.value.rows() != value.rows() || n.value.cols() != value.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "set_leaf_value shape differs for " + describe(leaf));
  }
  n.value = value;
}

void Tape::truncate(std::size_t mark) {
  if (mark < nodes_.size()) nodes_.resize(mark);
}

std::int32_t Tape::first_non_finite(std::size_t from) const {
  for (std::size_t i = from; i < nodes_.size(); ++i) {
    if (!nodes_[i].value.allFinite()) return static_cast<std::int32_t>(i);
  }
  return -1;
}

void Tape::accumulate(std::vector<Var>& adjoints, std::int32_t target, Var contribution) {
  Var& slot = adjoints[target];
  slot = slot.valid() ? add(slot, contribution) : contribution;
}

std::vector<Var> Tape::grad(Var output, std::span<const Var> wrt) {
  if (output.tape() != this) throw Error(ErrorCode::InvalidArgument, "grad: output is not on this tape");
  if (output.value().size() != 1) {
    throw Error(ErrorCode::ShapeMismatch, "grad: output must be 1x1, got " + describe(output));
  }
  const std::int32_t out = output.id();

  std::int32_t lo = out;
  std::vector<char> reach(static_cast<std::size_t>(out) + 1, 0);
  for (const Var& w : wrt) {
    if (w.tape() != this) throw Error(ErrorCode::InvalidArgument, "grad: wrt variable is not on this tape");
    if (w.id() <= out) {
      reach[w.id()] = 1;
      lo = std::min(lo, w.id());
    }
  }
  for (std::int32_t i = lo; i <= out; ++i) {
    if (reach[i]) continue;
    for (std::int32_t in : nodes_[i].inputs) {
      if (in >= 0 && reach[in]) {
        reach[i] = 1;
        break;
      }
    }
  }

  std::vector<Var> adjoints(static_cast<std::size_t>(out) + 1);
  if (reach[out]) {
    adjoints[out] = constant(scalar_matrix(1.0));
    for (std::int32_t i = out; i >= lo; --i) {
      if (!reach[i] || !adjoints[i].valid()) continue;
      vjp(i, adjoints[i], adjoints, reach);
    }
  }

  std::vector<Var> result;
  result.reserve(wrt.size());
  for (const Var& w : wrt) {
    if (w.id() <= out && adjoints[w.id()].valid()) {
      result.push_back(adjoints[w.id()]);
    } else {
      result.push_back(constant(Matrix::Zero(w.rows(), w.cols())));
    }
  }
  return result;
}

void Tape::vjp(std::int32_t id, Var g, std::vector<Var>& adjoints, const std::vector<char>& reach) {
  // Copy what we need: appending nodes may reallocate nodes_.
  const Op op = nodes_[id].op;
  const std::int32_t i0 = nodes_[id].inputs[0];
  const std::int32_t i1 = nodes_[id].inputs[1];
  const double a = nodes_[id].a;
  const Var self(this, id);
  const Var x(this, i0);
  const Var y(this, i1);
  const bool dx = i0 >= 0 && reach[i0];
  const bool dy = i1 >= 0 && reach[i1];

  switch (op) {
    case Op::Leaf:
    case Op::Constant:
    case Op::Step:
      break;
    case Op::Add:
      if (dx) accumulate(adjoints, i0, g);
      if (dy) accumulate(adjoints, i1, g);
      break;
    case Op::Sub:
      if (dx) accumulate(adjoints, i0, g);
      if (dy) accumulate(adjoints, i1, scale(g, -1.0));
      break;
    case Op::Mul:
      if (dx) accumulate(adjoints, i0, mul(g, y));
      if (dy) accumulate(adjoints, i1, mul(g, x));
      break;
    case Op::Affine:
      if (dx) accumulate(adjoints, i0, scale(g, a));
      break;
    case Op::MatMul:
      if (dx) accumulate(adjoints, i0, matmul(g, transpose(y)));
      if (dy) accumulate(adjoints, i1, matmul(transpose(x), g));
      break;
    case Op::Transpose:
      if (dx) accumulate(adjoints, i0, transpose(g));
      break;
    case Op::Sum:
      if (dx) accumulate(adjoints, i0, broadcast(g, x.rows(), x.cols()));
      break;
    case Op::Broadcast:
      if (dx) accumulate(adjoints, i0, sum(g));
      break;
    case Op::SumRows:
      if (dx) accumulate(adjoints, i0, broadcast_rows(g, x.rows()));
      break;
    case Op::BroadcastRows:
      if (dx) accumulate(adjoints, i0, sum_rows(g));
      break;
    case Op::RowSum:
      if (dx) accumulate(adjoints, i0, broadcast_cols(g, x.cols()));
      break;
    case Op::BroadcastCols:
      if (dx) accumulate(adjoints, i0, row_sum(g));
      break;
    case Op::Tanh:
      if (dx) accumulate(adjoints, i0, mul(g, affine(mul(self, self), -1.0, 1.0)));
      break;
    case Op::Sigmoid:
      if (dx) accumulate(adjoints, i0, mul(g, mul(self, affine(self, -1.0, 1.0))));
      break;
    case Op::Softplus:
      if (dx) accumulate(adjoints, i0, mul(g, sigmoid(x)));
      break;
    case Op::Relu:
      if (dx) accumulate(adjoints, i0, mul(g, step(x)));
      break;
    case Op::LogSumExpRows:
      if (dx) accumulate(adjoints, i0, mul(broadcast_cols(g, x.cols()), softmax_rows(x)));
      break;
    case Op::SoftmaxRows:
      if (dx) {
        accumulate(adjoints, i0, mul(self, sub(g, broadcast_cols(row_sum(mul(g, self)), x.cols()))));
      }
      break;
    case Op::SoftmaxCrossEntropy: {
      const Eigen::Index n = x.rows();
      const Eigen::Index c = x.cols();
      const Var gb = broadcast(g, n, c);
      if (dx) {
        // Row weights sum(y) generalise the usual softmax - y to soft targets.
        const Var weights = broadcast_cols(row_sum(y), c);
        accumulate(adjoints, i0, mul(gb, scale(sub(mul(weights, softmax_rows(x)), y), 1.0 / n)));
      }
      if (dy) {
        const Var log_softmax = sub(x, broadcast_cols(log_sum_exp_rows(x), c));
        accumulate(adjoints, i1, mul(gb, scale(log_softmax, -1.0 / n)));
      }
      break;
    }
    case Op::MeanSquaredError: {
      const Eigen::Index n = x.rows();
      const Var diff = scale(sub(x, y), 2.0 / n);
      const Var gb = broadcast(g, x.rows(), x.cols());
      if (dx) accumulate(adjoints, i0, mul(gb, diff));
      if (dy) accumulate(adjoints, i1, scale(mul(gb, diff), -1.0));
      break;
    }
  }
}

Var add(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same_shape(Op::Add, a, b);
  return t.append(Op::Add, a, b, a.value() + b.value());
}

Var sub(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same_shape(Op::Sub, a, b);
  return t.append(Op::Sub, a, b, a.value() - b.value());
}

Var mul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same_shape(Op::Mul, a, b);
  return t.append(Op::Mul, a, b, a.value().cwiseProduct(b.value()));
}

Var affine(Var x, double s, double shift) {
  Tape& t = tape_of(x);
  return t.append(Op::Affine, x, Var(), (s * x.value().array() + shift).matrix(), s, shift);
}

Var scale(Var x, double s) { return affine(x, s, 0.0); }

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  if (a.cols() != b.rows()) shape_error(Op::MatMul, a, b);
  return t.append(Op::MatMul, a, b, a.value() * b.value());
}

Var transpose(Var x) {
  Tape& t = tape_of(x);
  return t.append(Op::Transpose, x, Var(), x.value().transpose());
}

Var sum(Var x) {
  Tape& t = tape_of(x);
  return t.append(Op::Sum, x, Var(), scalar_matrix(x.value().sum()));
}

Var broadcast(Var s, Eigen::Index rows, Eigen::Index cols) {
  Tape& t = tape_of(s);
  if (s.value().size() != 1) shape_error(Op::Broadcast, s, Var());
  return t.append(Op::Broadcast, s, Var(), Matrix::Constant(rows, cols, s.value()(0, 0)));
}

Var sum_rows(Var x) {
  Tape& t = tape_of(x);
  return t.append(Op::SumRows, x, Var(), x.value().colwise().sum());
}

Var broadcast_rows(Var row, Eigen::Index rows) {
  Tape& t = tape_of(row);
  if (row.rows() != 1) shape_error(Op::BroadcastRows, row, Var());
  return t.append(Op::BroadcastRows, row, Var(), row.value().replicate(rows, 1));
}

Var row_sum(Var x) {
  Tape& t = tape_of(x);
  return t.append(Op::RowSum, x, Var(), x.value().rowwise().sum());
}

Var broadcast_cols(Var col, Eigen::Index cols) {
  Tape& t = tape_of(col);
  if (col.cols() != 1) shape_error(Op::BroadcastCols, col, Var());
  return t.append(Op::BroadcastCols, col, Var(), col.value().replicate(1, cols));
}

Var tanh(Var x) {
  Tape& t = tape_of(x);
  return t.append(Op::Tanh, x, Var(), x.value().array().tanh().matrix());
}

Var sigmoid(Var x) {
  Tape& t = tape_of(x);
  return t.append(Op::Sigmoid, x, Var(), x.value().unaryExpr([](double v) { return stable_sigmoid(v); }));
}

Var softplus(Var x) {
  Tape& t = tape_of(x);
  return t.append(Op::Softplus, x, Var(), x.value().unaryExpr([](double v) {
    return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v)));
  }));
}

Var relu(Var x) {
  Tape& t = tape_of(x);
  return t.append(Op::Relu, x, Var(), x.value().cwiseMax(0.0));
}

Var step(Var x) {
  Tape& t = tape_of(x);
  return t.append(Op::Step, x, Var(), x.value().unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.0; }));
}

Var log_sum_exp_rows(Var x) {
  Tape& t = tape_of(x);
  return t.append(Op::LogSumExpRows, x, Var(), lse_value(x.value()));
}

Var softmax_rows(Var x) {
  Tape& t = tape_of(x);
  return t.append(Op::SoftmaxRows, x, Var(), softmax_value(x.value()));
}

Var softmax_cross_entropy(Var logits, Var one_hot) {
  Tape& t = tape_of(logits, one_hot);
  require_same_shape(Op::SoftmaxCrossEntropy, logits, one_hot);
  if (logits.rows() == 0) shape_error(Op::SoftmaxCrossEntropy, logits, one_hot);
  const Matrix& x = logits.value();
  const Matrix& y = one_hot.value();
  const Matrix lse = lse_value(x);
  double total = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    total += y.row(i).sum() * lse(i, 0) - x.row(i).dot(y.row(i));
  }
  return t.append(Op::SoftmaxCrossEntropy, logits, one_hot, scalar_matrix(total / x.rows()));
}

Var mean_squared_error(Var prediction, Var target) {
  Tape& t = tape_of(prediction, target);
  require_same_shape(Op::MeanSquaredError, prediction, target);
  if (prediction.rows() == 0) shape_error(Op::MeanSquaredError, prediction, target);
  const double v = (prediction.value() - target.value()).squaredNorm() / prediction.rows();
  return t.append(Op::MeanSquaredError, prediction, target, scalar_matrix(v));
}

Var dot(Var a, Var b) { return sum(mul(a, b)); }

}  // namespace curvmon::ad
