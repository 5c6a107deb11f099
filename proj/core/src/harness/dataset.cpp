#include "curvmon/harness/dataset.hpp"

#include "curvmon/error.hpp"
#include "curvmon/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace curvmon::harness {

namespace {

constexpr std::uint64_t kMeanStream = 0xb10b;
constexpr std::uint64_t kPointStream = 0xb10c;
constexpr std::uint64_t kSplitStream = 0x5b17;
constexpr std::uint64_t kNoiseStream = 0x4015e;

void shuffle(std::vector<std::size_t>& v, CounterRng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[static_cast<std::size_t>(rng.below(i))]);
}

ad::Batch rows_of(const ad::Matrix& x, const std::vector<int>& y, std::span<const std::size_t> rows) {
  ad::Batch b;
  b.inputs.resize(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    b.inputs.row(static_cast<Eigen::Index>(r)) = x.row(static_cast<Eigen::Index>(rows[r]));
    b.labels.push_back(y[rows[r]]);
  }
  return b;
}

}  // namespace

std::size_t Dataset::corrupted_count() const {
  return static_cast<std::size_t>(std::count(corrupted.begin(), corrupted.end(), true));
}

ad::Batch Dataset::train_rows(std::span<const std::size_t> rows) const {
  return rows_of(train_inputs, train_labels, rows);
}

ad::Batch Dataset::train_batch() const {
  ad::Batch b;
  b.inputs = train_inputs;
  b.labels = train_labels;
  return b;
}

ad::Batch Dataset::test_batch() const {
  ad::Batch b;
  b.inputs = test_inputs;
  b.labels = test_labels;
  return b;
}

Dataset make_dataset(const DatasetSpec& spec) {
  if (spec.kind != "blobs") throw Error(ErrorCode::InvalidArgument, "unknown dataset kind '" + spec.kind + "'");
  if (spec.classes < 2) throw Error(ErrorCode::InvalidArgument, "a dataset needs at least two classes");
  if (spec.points_per_class <= 0) throw Error(ErrorCode::InvalidArgument, "a dataset needs points in every class");
  if (spec.input_dim <= 0) throw Error(ErrorCode::InvalidArgument, "input_dim must be positive");
  if (!(spec.test_fraction >= 0.0 && spec.test_fraction < 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "test_fraction must lie in [0, 1)");
  }
  if (!(spec.spread >= 0.0) || !(spec.separation >= 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "separation and spread must be non-negative");
  }
  const auto n_test = static_cast<int>(std::lround(spec.points_per_class * spec.test_fraction));
  const int n_train = spec.points_per_class - n_test;
  if (n_train <= 0) throw Error(ErrorCode::InvalidArgument, "the split leaves no training points");

  const auto d = static_cast<Eigen::Index>(spec.input_dim);
  ad::Matrix means(spec.classes, d);
  for (int c = 0; c < spec.classes; ++c) {
    CounterRng rng(spec.seed, kMeanStream, static_cast<std::uint64_t>(c));
    for (Eigen::Index j = 0; j < d; ++j) means(c, j) = rng.normal();
    means.row(c) *= spec.separation / means.row(c).norm();
  }

  Dataset out;
  out.classes = spec.classes;
  out.train_inputs.resize(static_cast<Eigen::Index>(n_train) * spec.classes, d);
  out.test_inputs.resize(static_cast<Eigen::Index>(n_test) * spec.classes, d);
  Eigen::Index tr = 0, te = 0;
  for (int c = 0; c < spec.classes; ++c) {
    std::vector<std::size_t> order(static_cast<std::size_t>(spec.points_per_class));
    std::iota(order.begin(), order.end(), std::size_t{0});
    CounterRng split(spec.seed, kSplitStream, static_cast<std::uint64_t>(c));
    shuffle(order, split);
    for (int i = 0; i < spec.points_per_class; ++i) {
      const std::uint64_t id = static_cast<std::uint64_t>(c) * static_cast<std::uint64_t>(spec.points_per_class) +
                               order[static_cast<std::size_t>(i)];
      CounterRng rng(spec.seed, kPointStream, id);
      Eigen::RowVectorXd x(d);
      for (Eigen::Index j = 0; j < d; ++j) x(j) = means(c, j) + spec.spread * rng.normal();
      if (i < n_train) {
        out.train_inputs.row(tr++) = x;
        out.train_labels.push_back(c);
      } else {
        out.test_inputs.row(te++) = x;
        out.test_labels.push_back(c);
      }
    }
  }
  out.clean_labels = out.train_labels;
  out.corrupted.assign(out.train_labels.size(), false);
  return out;
}

Dataset inject_label_noise(Dataset data, double eta, std::uint64_t seed) {
  if (!(eta >= 0.0 && eta < 1.0)) throw Error(ErrorCode::InvalidArgument, "label noise eta must lie in [0, 1)");
  const auto others = static_cast<std::uint64_t>(data.classes - 1);
  for (std::size_t i = 0; i < data.train_labels.size(); ++i) {
    CounterRng rng(seed, kNoiseStream, i);
    const bool flip = rng.uniform() < eta;
    if (!flip) continue;
    auto draw = static_cast<int>(rng.below(others));
    if (draw >= data.clean_labels[i]) ++draw;
    data.train_labels[i] = draw;
    data.corrupted[i] = true;
  }
  return data;
}

nlohmann::json to_json(const DatasetSpec& s) {
  return {{"kind", s.kind},           {"classes", s.classes},     {"points_per_class", s.points_per_class},
          {"input_dim", s.input_dim}, {"separation", s.separation}, {"spread", s.spread},
          {"test_fraction", s.test_fraction}, {"seed", s.seed}};
}

DatasetSpec dataset_spec_from_json(const nlohmann::json& j) {
  DatasetSpec s;
  try {
    s.kind = j.value("kind", s.kind);
    s.classes = j.value("classes", s.classes);
    s.points_per_class = j.value("points_per_class", s.points_per_class);
    s.input_dim = j.value("input_dim", s.input_dim);
    s.separation = j.value("separation", s.separation);
    s.spread = j.value("spread", s.spread);
    s.test_fraction = j.value("test_fraction", s.test_fraction);
    s.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Parse, std::string("dataset: ") + e.what());
  }
  return s;
}

}  // namespace curvmon::harness
