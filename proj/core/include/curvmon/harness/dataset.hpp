#pragma once

#include "curvmon/ad/model.hpp"

#include <nlohmann/json.hpp>

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace curvmon::harness {

/// Isotropic Gaussian blobs: class means are drawn on a sphere of radius
/// `separation`, points scatter around them with standard deviation `spread`.
struct DatasetSpec {
  std::string kind = "blobs";
  int classes = 4;
  int points_per_class = 64;
  int input_dim = 8;
  double separation = 3.0;
  double spread = 1.0;
  double test_fraction = 0.25;
  std::uint64_t seed = 0;

  bool operator==(const DatasetSpec&) const = default;
};

struct Dataset {
  int classes = 0;
  ad::Matrix train_inputs;
  std::vector<int> train_labels;  // possibly corrupted
  std::vector<int> clean_labels;  // labels before noise injection
  std::vector<bool> corrupted;    // train_labels[i] != clean_labels[i]
  ad::Matrix test_inputs;
  std::vector<int> test_labels;

  std::size_t train_size() const noexcept { return train_labels.size(); }
  std::size_t corrupted_count() const;
  ad::Batch train_rows(std::span<const std::size_t> rows) const;
  ad::Batch train_batch() const;
  ad::Batch test_batch() const;
};

/// Deterministic in spec.seed. The split is stratified, so every class keeps
/// round(points_per_class * (1 - test_fraction)) training points.
Dataset make_dataset(const DatasetSpec& spec);

/// Each training label is, with probability eta, replaced by a uniform draw
/// over the other classes. Test labels are left untouched.
Dataset inject_label_noise(Dataset data, double eta, std::uint64_t seed);

nlohmann::json to_json(const DatasetSpec& spec);
DatasetSpec dataset_spec_from_json(const nlohmann::json& j);

}  // namespace curvmon::harness
