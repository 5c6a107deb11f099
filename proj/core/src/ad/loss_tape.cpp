#include "curvmon/ad/loss_tape.hpp"

#include "curvmon/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace curvmon::ad {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Matrix to_matrix(std::span<const double> flat, Eigen::Index rows, Eigen::Index cols) {
  return Eigen::Map<const RowMajor>(flat.data(), rows, cols);
}

void write_flat(const Matrix& m, std::span<double> out) {
  Eigen::Map<RowMajor>(out.data(), m.rows(), m.cols()) = m;
}

bool all_zero(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; });
}

class SlotBinder final : public ParamBinder {
 public:
  SlotBinder(const std::vector<std::vector<std::size_t>>& lookup, const std::vector<Var>& leaves,
             std::span<const GroupInfo> groups, std::span<const TensorShape> tensors)
      : lookup_(lookup), leaves_(leaves), groups_(groups), tensors_(tensors) {}

  Var use(std::size_t tensor, int site) const override {
    if (tensor >= lookup_.size()) {
      throw Error(ErrorCode::InvalidArgument, "model referenced tensor " + std::to_string(tensor) + " out of range");
    }
    const int uses = groups_[tensors_[tensor].group].uses;
    if (site < 0 || site >= uses) {
      throw Error(ErrorCode::InvalidArgument, "tensor '" + tensors_[tensor].name + "' used at site " +
                                                  std::to_string(site) + " but declares " + std::to_string(uses) +
                                                  " uses");
    }
    const auto& sites = lookup_[tensor];
    return leaves_[sites[sites.size() == 1 ? 0 : static_cast<std::size_t>(site)]];
  }

 private:
  const std::vector<std::vector<std::size_t>>& lookup_;
  const std::vector<Var>& leaves_;
  std::span<const GroupInfo> groups_;
  std::span<const TensorShape> tensors_;
};

}  // namespace

LossTape::LossTape(const Model& model, SharingMode mode, double weight_decay)
    : model_(&model), mode_(mode), weight_decay_(weight_decay), partition_(model.partition()) {
  if (weight_decay < 0.0) throw Error(ErrorCode::InvalidArgument, "weight decay must be non-negative");
  const auto tensors = model.tensors();
  const auto groups = model.groups();

  tensor_offsets_.resize(tensors.size());
  std::size_t offset = 0;
  for (std::size_t t = 0; t < tensors.size(); ++t) {
    tensor_offsets_[t] = offset;
    offset += static_cast<std::size_t>(tensors[t].rows * tensors[t].cols);
  }

  if (mode == SharingMode::Unrolled) {
    if (!model.has_shared_groups()) {
      throw Error(ErrorCode::InvalidArgument, "unrolled mode requires a parameter group with at least two uses");
    }
    leaf_partition_ = model.unrolled_partition();
    std::size_t leaf_group = 0;
    for (const auto& g : groups) {
      auto& copies = group_copies_.emplace_back();
      for (int site = 0; site < g.uses; ++site) copies.push_back(leaf_group++);
    }
    std::size_t leaf_offset = 0;
    std::size_t t = 0;
    for (std::size_t g = 0; g < groups.size(); ++g) {
      std::size_t first = t;
      while (t < tensors.size() && tensors[t].group == g) ++t;
      for (int site = 0; site < groups[g].uses; ++site) {
        for (std::size_t k = first; k < t; ++k) {
          slots_.push_back({k, site, leaf_offset});
          leaf_offset += static_cast<std::size_t>(tensors[k].rows * tensors[k].cols);
        }
      }
    }
  } else {
    leaf_partition_ = partition_;
    for (std::size_t g = 0; g < groups.size(); ++g) group_copies_.push_back({g});
    for (std::size_t t = 0; t < tensors.size(); ++t) slots_.push_back({t, 0, tensor_offsets_[t]});
  }
}

std::vector<double> LossTape::expand(std::span<const double> params) const {
  if (params.size() != dim()) {
    throw Error(ErrorCode::ShapeMismatch, "parameter vector has length " + std::to_string(params.size()) +
                                              ", partition expects " + std::to_string(dim()));
  }
  const auto tensors = model_->tensors();
  std::vector<double> leaf(leaf_dim(), 0.0);
  for (const auto& s : slots_) {
    const auto n = static_cast<std::size_t>(tensors[s.tensor].rows * tensors[s.tensor].cols);
    std::copy_n(params.begin() + static_cast<std::ptrdiff_t>(tensor_offsets_[s.tensor]), n,
                leaf.begin() + static_cast<std::ptrdiff_t>(s.offset));
  }
  return leaf;
}

std::vector<double> LossTape::collapse(std::span<const double> leaf_values) const {
  if (leaf_values.size() != leaf_dim()) {
    throw Error(ErrorCode::ShapeMismatch, "leaf vector has length " + std::to_string(leaf_values.size()) +
                                              ", expected " + std::to_string(leaf_dim()));
  }
  const auto tensors = model_->tensors();
  std::vector<double> out(dim(), 0.0);
  for (const auto& s : slots_) {
    const auto n = static_cast<std::size_t>(tensors[s.tensor].rows * tensors[s.tensor].cols);
    for (std::size_t i = 0; i < n; ++i) out[tensor_offsets_[s.tensor] + i] += leaf_values[s.offset + i];
  }
  return out;
}

double LossTape::forward(std::span<const double> params, const Batch& batch) {
  return build(expand(params), batch);
}

double LossTape::forward_leaves(std::span<const double> leaf_params, const Batch& batch) {
  if (leaf_params.size() != leaf_dim()) {
    throw Error(ErrorCode::ShapeMismatch, "leaf parameter vector has length " + std::to_string(leaf_params.size()) +
                                              ", expected " + std::to_string(leaf_dim()));
  }
  return build(leaf_params, batch);
}

double LossTape::build(std::span<const double> leaf_params, const Batch& batch) {
  const auto tensors = model_->tensors();
  const auto groups = model_->groups();
  tape_->clear();
  leaves_.clear();
  grads_.clear();
  grad_values_.clear();
  state_ = State::Empty;

  std::vector<std::vector<std::size_t>> lookup(tensors.size());
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    const auto& s = slots_[i];
    const auto& t = tensors[s.tensor];
    const auto n = static_cast<std::size_t>(t.rows * t.cols);
    std::string label = groups[t.group].name + "." + t.name;
    if (mode_ == SharingMode::Unrolled && groups[t.group].uses > 1) label += "[" + std::to_string(s.site) + "]";
    leaves_.push_back(tape_->leaf(to_matrix(leaf_params.subspan(s.offset, n), t.rows, t.cols), std::move(label)));
    lookup[s.tensor].push_back(i);
  }

  SlotBinder binder(lookup, leaves_, groups, tensors);
  Var loss = model_->loss(binder, batch, *tape_);
  if (!loss.valid() || loss.value().size() != 1) {
    throw Error(ErrorCode::ShapeMismatch, "model loss must be a 1x1 node");
  }
  if (weight_decay_ > 0.0) {
    Var reg;
    for (std::size_t i = 0; i < slots_.size(); ++i) {
      if (slots_[i].site != 0) continue;
      Var term = dot(leaves_[i], leaves_[i]);
      reg = reg.valid() ? add(reg, term) : term;
    }
    loss = add(loss, scale(reg, weight_decay_));
  }
  loss_ = loss;
  loss_mark_ = tape_->size();
  state_ = State::Evaluated;
  ++counters_.forward_passes;
  return loss_.scalar();
}

double LossTape::loss() const {
  if (state_ == State::Empty) throw Error(ErrorCode::InvalidState, "loss requested before forward");
  return loss_.scalar();
}

void LossTape::compute_gradient(bool retain) {
  if (state_ == State::Empty) throw Error(ErrorCode::InvalidState, "gradient requested before forward");
  if (state_ == State::Retained) return;
  if (state_ == State::Released && !retain) return;

  tape_->truncate(loss_mark_);
  grads_ = tape_->grad(loss_, leaves_);
  grad_values_.assign(leaf_dim(), 0.0);
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    write_flat(grads_[i].value(), std::span<double>(grad_values_).subspan(slots_[i].offset, grads_[i].value().size()));
  }
  ++counters_.gradient_passes;
  if (retain) {
    state_ = State::Retained;
  } else {
    grads_.clear();
    tape_->truncate(loss_mark_);
    state_ = State::Released;
  }
}

std::vector<double> LossTape::leaf_gradient(bool retain) {
  compute_gradient(retain);
  return grad_values_;
}

std::vector<double> LossTape::gradient(bool retain) {
  compute_gradient(retain);
  return collapse(grad_values_);
}

std::vector<double> LossTape::sweep(std::span<const double> u) {
  if (state_ != State::Retained) {
    throw Error(ErrorCode::InvalidState,
                "second differentiation requested but the gradient was not computed with retain set");
  }
  const std::size_t mark = tape_->size();
  Var inner;
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    const Var& g = grads_[i];
    const auto part = u.subspan(slots_[i].offset, static_cast<std::size_t>(g.value().size()));
    if (all_zero(part)) continue;
    Var term = dot(g, tape_->constant(to_matrix(part, g.rows(), g.cols())));
    inner = inner.valid() ? add(inner, term) : term;
  }
  std::vector<double> out(leaf_dim(), 0.0);
  ++counters_.raw_hvp_calls;
  if (!inner.valid()) return out;

  const auto hv = tape_->grad(inner, leaves_);
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    write_flat(hv[i].value(), std::span<double>(out).subspan(slots_[i].offset, hv[i].value().size()));
  }
  if (!std::all_of(out.begin(), out.end(), [](double x) { return std::isfinite(x); })) {
    const std::int32_t bad = tape_->first_non_finite(0);
    std::string where = "unknown node";
    if (bad >= 0) {
      const auto& n = tape_->node(bad);
      where = "node " + std::to_string(bad) + " (" + std::string(op_name(n.op)) +
              (n.label.empty() ? "" : " '" + n.label + "'") + ")";
    }
    tape_->truncate(mark);
    throw Error(ErrorCode::NonFinite, "Hessian-vector product is non-finite; first offending " + where);
  }
  tape_->truncate(mark);
  return out;
}

std::vector<double> LossTape::leaf_hvp(std::span<const double> u) {
  if (u.size() != leaf_dim()) {
    throw Error(ErrorCode::ShapeMismatch, "hvp direction has length " + std::to_string(u.size()) + ", expected " +
                                              std::to_string(leaf_dim()));
  }
  return sweep(u);
}

std::vector<double> LossTape::hvp(std::span<const double> v) {
  if (v.size() != dim()) {
    throw Error(ErrorCode::ShapeMismatch, "hvp direction has length " + std::to_string(v.size()) + ", expected " +
                                              std::to_string(dim()));
  }
  ++counters_.hvp_calls;
  if (mode_ == SharingMode::Shared) return sweep(v);

  std::vector<double> w = collapse(sweep(expand(v)));

  // Remove sum_{k != k'} d2L/dW(k) dW(k') v_g for every shared group g.
  for (std::size_t g = 0; g < partition_.layer_count(); ++g) {
    const auto& group = partition_.group(g);
    if (group.uses < 2) continue;
    const auto& copies = group_copies_[g];
    const auto vg = partition_.slice(v, g);

    std::vector<double> u_all(leaf_dim(), 0.0);
    for (std::size_t j : copies) std::copy(vg.begin(), vg.end(), u_all.begin() + leaf_partition_.group(j).offset);
    const auto all = sweep(u_all);

    std::vector<double> cross(group.size, 0.0);
    for (std::size_t j : copies) {
      const std::size_t off = leaf_partition_.group(j).offset;
      std::vector<double> u_site(leaf_dim(), 0.0);
      std::copy(vg.begin(), vg.end(), u_site.begin() + off);
      const auto own = sweep(u_site);
      for (std::size_t i = 0; i < group.size; ++i) cross[i] += all[off + i] - own[off + i];
    }
    for (std::size_t i = 0; i < group.size; ++i) w[group.offset + i] -= cross[i];
  }
  return w;
}

}  // namespace curvmon::ad
