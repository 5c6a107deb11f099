#include "curvmon/harness/io.hpp"

#include "curvmon/error.hpp"

#include <fstream>

namespace curvmon::harness {

namespace {

ad::Matrix matrix_from_json(const nlohmann::json& rows, const char* what) {
  if (!rows.is_array() || rows.empty()) throw Error(ErrorCode::Parse, std::string(what) + " must be a non-empty array");
  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto d = static_cast<Eigen::Index>(rows[0].size());
  ad::Matrix m(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& row = rows[static_cast<std::size_t>(i)];
    if (static_cast<Eigen::Index>(row.size()) != d) {
      throw Error(ErrorCode::ShapeMismatch, std::string(what) + " rows have different lengths");
    }
    for (Eigen::Index j = 0; j < d; ++j) m(i, j) = row[static_cast<std::size_t>(j)].get<double>();
  }
  return m;
}

nlohmann::json matrix_to_json(const ad::Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Parse, path.string() + ": " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw Error(ErrorCode::Io, "write failed for " + path.string());
}

std::vector<double> load_params(const std::filesystem::path& path) {
  const auto j = read_json_file(path);
  try {
    const auto& arr = j.is_array() ? j : j.at("params");
    return arr.get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Parse, path.string() + ": " + e.what());
  }
}

void save_params(const std::vector<double>& params, const std::filesystem::path& path) {
  write_json_file(path, {{"params", params}});
}

ad::Batch batch_from_json(const nlohmann::json& j) {
  ad::Batch b;
  try {
    b.inputs = matrix_from_json(j.at("inputs"), "inputs");
    if (j.contains("labels")) b.labels = j["labels"].get<std::vector<int>>();
    if (j.contains("targets")) b.targets = matrix_from_json(j["targets"], "targets");
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Parse, std::string("batch: ") + e.what());
  }
  if (!b.labels.empty() && b.labels.size() != b.size()) {
    throw Error(ErrorCode::ShapeMismatch, "batch has " + std::to_string(b.size()) + " inputs but " +
                                              std::to_string(b.labels.size()) + " labels");
  }
  if (b.targets.rows() != 0 && static_cast<std::size_t>(b.targets.rows()) != b.size()) {
    throw Error(ErrorCode::ShapeMismatch, "batch targets and inputs have different row counts");
  }
  return b;
}

nlohmann::json to_json(const ad::Batch& b) {
  nlohmann::json j;
  j["inputs"] = matrix_to_json(b.inputs);
  if (!b.labels.empty()) j["labels"] = b.labels;
  if (b.targets.rows() != 0) j["targets"] = matrix_to_json(b.targets);
  return j;
}

ad::Batch load_batch(const std::filesystem::path& path) {
  try {
    return batch_from_json(read_json_file(path));
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.detail());
  }
}

}  // namespace curvmon::harness
