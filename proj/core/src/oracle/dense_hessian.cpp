#include "curvmon/oracle/dense_hessian.hpp"

#include "curvmon/error.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace curvmon::oracle {

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &v, sizeof(T));
    std::reverse(bytes, bytes + sizeof(T));
    std::memcpy(&v, bytes, sizeof(T));
  }
  return v;
}

template <typename T>
void put(std::ofstream& out, T v) {
  v = to_little(v);
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw Error(ErrorCode::Io, "truncated Hessian dump");
  return to_little(v);
}

void check_layer(const DenseHessian& h, std::size_t layer) {
  if (layer >= h.partition.layer_count()) {
    throw Error(ErrorCode::InvalidArgument, "layer " + std::to_string(layer) + " not in partition (L=" +
                                                std::to_string(h.partition.layer_count()) + ")");
  }
}

}  // namespace

DenseHessian assemble(ad::LossTape& tape, std::span<const double> params, const ad::Batch& batch,
                      AssemblyMethod method, const OracleOptions& options) {
  const bool leaves = options.coordinates == Coordinates::Leaves;
  const std::size_t n = leaves ? tape.leaf_dim() : tape.dim();
  if (n > options.cap) {
    throw Error(ErrorCode::CapExceeded, "dense Hessian of dimension " + std::to_string(n) + " exceeds the oracle cap " +
                                            std::to_string(options.cap) + "; set the cap to at least " +
                                            std::to_string(n));
  }

  DenseHessian out;
  out.source = method;
  out.partition = leaves ? tape.leaf_partition() : tape.partition();
  out.matrix.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));

  const std::vector<double> base = leaves ? tape.expand(params) : std::vector<double>(params.begin(), params.end());

  if (method == AssemblyMethod::BasisHvp) {
    tape.forward(params, batch);
    tape.gradient(true);
    std::vector<double> e(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      e[j] = 1.0;
      const auto col = leaves ? tape.leaf_hvp(e) : tape.hvp(e);
      e[j] = 0.0;
      for (std::size_t i = 0; i < n; ++i) out.matrix(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = col[i];
    }
  } else {
    const double eps = options.fd_step;
    auto grad_at = [&](const std::vector<double>& x) {
      if (leaves) {
        tape.forward_leaves(x, batch);
        return tape.leaf_gradient(false);
      }
      tape.forward(x, batch);
      return tape.gradient(false);
    };
    std::vector<double> x = base;
    for (std::size_t j = 0; j < n; ++j) {
      x[j] = base[j] + eps;
      const auto up = grad_at(x);
      x[j] = base[j] - eps;
      const auto down = grad_at(x);
      x[j] = base[j];
      for (std::size_t i = 0; i < n; ++i) {
        out.matrix(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = (up[i] - down[i]) / (2.0 * eps);
      }
    }
    tape.forward(params, batch);
    tape.gradient(true);
  }

  const double norm = out.matrix.norm();
  out.asymmetry = norm > 0.0 ? (out.matrix - out.matrix.transpose()).norm() / norm : 0.0;
  out.matrix = 0.5 * (out.matrix + out.matrix.transpose()).eval();
  return out;
}

Matrix block(const DenseHessian& h, std::size_t layer) {
  check_layer(h, layer);
  const auto& g = h.partition.group(layer);
  const auto off = static_cast<Eigen::Index>(g.offset);
  const auto size = static_cast<Eigen::Index>(g.size);
  return h.matrix.block(off, off, size, size);
}

BlockStats exact_block_stats(const Matrix& b) {
  BlockStats s;
  s.trace = b.trace();
  s.frobenius_sq = b.squaredNorm();
  s.diag_sq_sum = b.diagonal().squaredNorm();
  if (static_cast<std::size_t>(b.rows()) <= kMaxEigenBlock && b.rows() > 0) {
    Eigen::SelfAdjointEigenSolver<Matrix> solver(b, Eigen::EigenvaluesOnly);
    if (solver.info() != Eigen::Success) throw Error(ErrorCode::NonFinite, "symmetric eigensolver failed");
    const auto& ev = solver.eigenvalues();
    s.eigenvalues.assign(ev.data(), ev.data() + ev.size());
  }
  return s;
}

BlockStats exact_block_stats(const DenseHessian& h, std::size_t layer) { return exact_block_stats(block(h, layer)); }

Matrix cross_block(const DenseHessian& h, std::size_t layer, std::size_t other) {
  check_layer(h, layer);
  check_layer(h, other);
  if (layer == other) {
    throw Error(ErrorCode::InvalidArgument, "cross_block needs two distinct layers; use exact_block_stats for l = m");
  }
  const auto& a = h.partition.group(layer);
  const auto& b = h.partition.group(other);
  return h.matrix.block(static_cast<Eigen::Index>(a.offset), static_cast<Eigen::Index>(b.offset),
                        static_cast<Eigen::Index>(a.size), static_cast<Eigen::Index>(b.size));
}

double cross_instance_trace(const DenseHessian& leaf_hessian, std::span<const std::size_t> copies) {
  double total = 0.0;
  for (std::size_t k : copies) {
    for (std::size_t kk : copies) {
      if (k == kk) continue;
      const Matrix c = cross_block(leaf_hessian, k, kk);
      if (c.rows() != c.cols()) {
        throw Error(ErrorCode::ShapeMismatch, "copies of one group must have equal sizes");
      }
      total += c.trace();
    }
  }
  return total;
}

void write_binary(const DenseHessian& h, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  const auto p = static_cast<std::uint64_t>(h.matrix.rows());
  put<std::uint64_t>(out, p);
  put<std::uint64_t>(out, h.partition.layer_count());
  for (const auto& g : h.partition.groups()) put<std::uint64_t>(out, g.offset);
  put<std::uint64_t>(out, h.partition.total());
  for (Eigen::Index i = 0; i < h.matrix.rows(); ++i)
    for (Eigen::Index j = 0; j < h.matrix.cols(); ++j) put<double>(out, h.matrix(i, j));
  if (!out) throw Error(ErrorCode::Io, "short write to " + path.string());
}

DenseHessian read_binary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot read " + path.string());
  const auto p = get<std::uint64_t>(in);
  const auto layers = get<std::uint64_t>(in);
  std::vector<std::uint64_t> offsets(layers + 1);
  for (auto& o : offsets) o = get<std::uint64_t>(in);
  if (offsets.back() != p) throw Error(ErrorCode::Parse, "Hessian dump offsets do not end at P");
  std::vector<std::size_t> sizes;
  for (std::size_t l = 0; l < layers; ++l) {
    if (offsets[l + 1] < offsets[l]) throw Error(ErrorCode::Parse, "Hessian dump offsets decrease");
    sizes.push_back(offsets[l + 1] - offsets[l]);
  }
  DenseHessian h;
  h.partition = ParamPartition::from_sizes(sizes);
  h.matrix.resize(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p));
  for (Eigen::Index i = 0; i < h.matrix.rows(); ++i)
    for (Eigen::Index j = 0; j < h.matrix.cols(); ++j) h.matrix(i, j) = get<double>(in);
  return h;
}

}  // namespace curvmon::oracle
