#include "curvmon/ad/model.hpp"

#include "curvmon/error.hpp"

#include <algorithm>

namespace curvmon::ad {

ParamPartition::ParamPartition(std::vector<Group> groups) : groups_(std::move(groups)) {
  std::size_t next = 0;
  for (const auto& g : groups_) {
    if (g.offset != next) {
      throw Error(ErrorCode::InvalidArgument, "partition group '" + g.name + "' is not contiguous");
    }
    if (g.uses < 1) throw Error(ErrorCode::InvalidArgument, "partition group '" + g.name + "' has uses < 1");
    next += g.size;
  }
  total_ = next;
}

ParamPartition ParamPartition::from_sizes(std::span<const std::size_t> sizes) {
  std::vector<Group> groups;
  std::size_t offset = 0;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    groups.push_back({"g" + std::to_string(i), offset, sizes[i], 1, 0});
    offset += sizes[i];
  }
  return ParamPartition(std::move(groups));
}

const ParamPartition::Group& ParamPartition::group(std::size_t layer) const {
  if (layer >= groups_.size()) {
    throw Error(ErrorCode::InvalidArgument, "layer " + std::to_string(layer) + " out of range (L=" +
                                                std::to_string(groups_.size()) + ")");
  }
  return groups_[layer];
}

std::span<const double> ParamPartition::slice(std::span<const double> v, std::size_t layer) const {
  const auto& g = group(layer);
  return v.subspan(g.offset, g.size);
}

std::span<double> ParamPartition::slice(std::span<double> v, std::size_t layer) const {
  const auto& g = group(layer);
  return v.subspan(g.offset, g.size);
}

namespace {

void check_tensor_order(const Model& model) {
  const auto tensors = model.tensors();
  const auto groups = model.groups();
  std::size_t current = 0;
  for (const auto& t : tensors) {
    if (t.group >= groups.size()) {
      throw Error(ErrorCode::InvalidArgument, "tensor '" + t.name + "' references unknown group");
    }
    if (t.group < current) {
      throw Error(ErrorCode::InvalidArgument, "tensor '" + t.name + "' breaks group contiguity");
    }
    current = t.group;
  }
}

}  // namespace

ParamPartition Model::partition() const {
  check_tensor_order(*this);
  const auto groups = this->groups();
  std::vector<std::size_t> sizes(groups.size(), 0);
  for (const auto& t : tensors()) sizes[t.group] += static_cast<std::size_t>(t.rows * t.cols);
  std::vector<ParamPartition::Group> out;
  std::size_t offset = 0;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    out.push_back({groups[g].name, offset, sizes[g], groups[g].uses, 0});
    offset += sizes[g];
  }
  return ParamPartition(std::move(out));
}

ParamPartition Model::unrolled_partition() const {
  const ParamPartition shared = partition();
  std::vector<ParamPartition::Group> out;
  std::size_t offset = 0;
  for (const auto& g : shared.groups()) {
    for (int site = 0; site < g.uses; ++site) {
      std::string name = g.uses > 1 ? g.name + "[" + std::to_string(site) + "]" : g.name;
      out.push_back({std::move(name), offset, g.size, 1, site});
      offset += g.size;
    }
  }
  return ParamPartition(std::move(out));
}

bool Model::has_shared_groups() const { return max_uses() > 1; }

int Model::max_uses() const {
  int m = 1;
  for (const auto& g : groups()) m = std::max(m, g.uses);
  return m;
}

}  // namespace curvmon::ad
