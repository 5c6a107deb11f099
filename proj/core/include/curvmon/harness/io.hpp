#pragma once

#include "curvmon/ad/model.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <vector>

namespace curvmon::harness {

/// {"params": [..]} or a bare array.
std::vector<double> load_params(const std::filesystem::path& path);
void save_params(const std::vector<double>& params, const std::filesystem::path& path);

/// {"inputs": [[..], ..], "labels": [..]} for classification or
/// {"inputs": .., "targets": [[..], ..]} for regression.
ad::Batch batch_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ad::Batch& batch);
ad::Batch load_batch(const std::filesystem::path& path);

nlohmann::json read_json_file(const std::filesystem::path& path);
/// Pretty-printed with a trailing newline.
void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace curvmon::harness
