#include "curvmon/harness/run.hpp"

#include "curvmon/error.hpp"
#include "curvmon/harness/io.hpp"
#include "curvmon/rng.hpp"
#include "curvmon/trace/snapshot_io.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <ctime>
#include <exception>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <sstream>
#include <thread>

namespace curvmon::harness {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kOrderStream = 0x0d3e;

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

double accuracy(const ad::Matrix& logits, std::span<const int> labels) {
  if (labels.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    Eigen::Index arg = 0;
    logits.row(static_cast<Eigen::Index>(i)).maxCoeff(&arg);
    hits += static_cast<int>(arg) == labels[i];
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

FinalMetrics evaluate(const ad::Network& net, std::span<const double> params, const Dataset& data) {
  FinalMetrics m;
  ad::LossTape plain(net);
  m.train_loss = plain.forward(params, data.train_batch());
  const ad::Matrix train = net.predict(params, data.train_inputs);
  m.train_accuracy = accuracy(train, data.train_labels);
  m.clean_train_accuracy = accuracy(train, data.clean_labels);
  m.test_accuracy = accuracy(net.predict(params, data.test_inputs), data.test_labels);
  std::size_t corrupted = 0, fitted = 0;
  for (std::size_t i = 0; i < data.train_size(); ++i) {
    if (!data.corrupted[i]) continue;
    ++corrupted;
    Eigen::Index arg = 0;
    train.row(static_cast<Eigen::Index>(i)).maxCoeff(&arg);
    fitted += static_cast<int>(arg) == data.train_labels[i];
  }
  m.memorised_fraction = corrupted ? static_cast<double>(fitted) / static_cast<double>(corrupted) : 0.0;
  return m;
}

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

nlohmann::json metrics_json(const FinalMetrics& m) {
  return {{"train_loss", m.train_loss},
          {"train_accuracy", m.train_accuracy},
          {"clean_train_accuracy", m.clean_train_accuracy},
          {"test_accuracy", m.test_accuracy},
          {"memorised_fraction", m.memorised_fraction}};
}

}  // namespace

void RunConfig::validate() const {
  if (!(eta >= 0.0 && eta < 1.0)) throw Error(ErrorCode::InvalidArgument, "eta must lie in [0, 1)");
  if (snapshot_every < 1) throw Error(ErrorCode::InvalidArgument, "snapshot_every must be at least 1");
  if (K < 1) throw Error(ErrorCode::InvalidArgument, "K must be at least 1");
  if (batch_size < 1) throw Error(ErrorCode::InvalidArgument, "batch_size must be at least 1");
  if (epochs < 1) throw Error(ErrorCode::InvalidArgument, "epochs must be at least 1");
  if (!(optimizer.learning_rate > 0.0)) throw Error(ErrorCode::InvalidArgument, "learning rate must be positive");
  if (!(optimizer.momentum >= 0.0 && optimizer.momentum < 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "momentum must lie in [0, 1)");
  }
  if (!(optimizer.weight_decay >= 0.0)) throw Error(ErrorCode::InvalidArgument, "weight decay must be >= 0");
  if (run_id.empty() || run_id.find('/') != std::string::npos) {
    throw Error(ErrorCode::InvalidArgument, "run_id must be a non-empty name without '/'");
  }
}

RunConfig desk_config() {
  RunConfig c;
  c.run_id = "desk";
  c.dataset.seed = 1;
  c.epochs = 60;
  c.snapshot_every = 3;
  return c;
}

ad::ModelSpec RunConfig::model() const {
  ad::ModelSpec spec;
  if (model_spec) {
    spec = ad::parse_model_spec(*model_spec);
  } else if (architecture == "mlp-small") {
    spec = ad::mlp_small(dataset.input_dim, dataset.classes);
  } else if (architecture == "mlp-tied") {
    spec = ad::mlp_tied(dataset.input_dim, dataset.classes);
  } else {
    throw Error(ErrorCode::InvalidArgument, "unknown architecture '" + architecture + "'");
  }
  if (spec.input_dim != dataset.input_dim || spec.output_dim != dataset.classes) {
    throw Error(ErrorCode::ShapeMismatch, "model dimensions do not match the dataset");
  }
  return spec;
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  try {
    c.run_id = j.value("run_id", c.run_id);
    c.architecture = j.value("architecture", c.architecture);
    if (j.contains("model_spec") && !j["model_spec"].is_null()) c.model_spec = j["model_spec"].get<std::string>();
    c.dataset = dataset_spec_from_json(j.at("dataset"));
    c.eta = j.value("eta", 0.0);
    if (j.contains("optimizer")) {
      const auto& o = j["optimizer"];
      c.optimizer.momentum = o.value("momentum", c.optimizer.momentum);
      c.optimizer.learning_rate = o.value("learning_rate", c.optimizer.learning_rate);
      c.optimizer.cosine = o.value("cosine", c.optimizer.cosine);
      c.optimizer.weight_decay = o.value("weight_decay", c.optimizer.weight_decay);
    }
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.snapshot_every = j.value("snapshot_every", c.snapshot_every);
    c.K = j.value("K", c.K);
    c.probe_kind = trace::parse_probe_kind(j.value("probe_kind", std::string("rademacher")));
    const auto& s = j.at("seeds");
    c.seeds.init = s.at("init").get<std::uint64_t>();
    c.seeds.order = s.at("order").get<std::uint64_t>();
    c.seeds.probes = s.at("probes").get<std::uint64_t>();
    c.seeds.noise = s.at("noise").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Parse, std::string("run config: ") + e.what());
  }
  c.validate();
  return c;
}

nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j;
  j["run_id"] = c.run_id;
  j["architecture"] = c.architecture;
  j["model_spec"] = c.model_spec ? nlohmann::json(*c.model_spec) : nlohmann::json(nullptr);
  j["dataset"] = to_json(c.dataset);
  j["eta"] = c.eta;
  j["optimizer"] = {{"momentum", c.optimizer.momentum},
                    {"learning_rate", c.optimizer.learning_rate},
                    {"cosine", c.optimizer.cosine},
                    {"weight_decay", c.optimizer.weight_decay}};
  j["batch_size"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["snapshot_every"] = c.snapshot_every;
  j["K"] = c.K;
  j["probe_kind"] = std::string(trace::to_string(c.probe_kind));
  j["seeds"] = {{"init", c.seeds.init}, {"order", c.seeds.order}, {"probes", c.seeds.probes}, {"noise", c.seeds.noise}};
  return j;
}

RunConfig load_run_config(const fs::path& path) { return run_config_from_json(read_json_file(path)); }

RunRecord train_with_monitoring(const RunConfig& config, const std::optional<fs::path>& out_dir) {
  config.validate();
  const auto started = std::chrono::steady_clock::now();
  const std::string started_at = utc_now();

  const ad::Network net(config.model());
  Dataset data = inject_label_noise(make_dataset(config.dataset), config.eta, config.seeds.noise);

  RunRecord rec;
  rec.config = config;
  rec.corrupted_labels = data.corrupted_count();
  const std::size_t n = data.train_size();
  if (n < config.batch_size) {
    throw Error(ErrorCode::InvalidArgument, "batch_size exceeds the training set size");
  }
  rec.steps_per_epoch = n / config.batch_size;
  const std::size_t total = rec.steps_per_epoch * static_cast<std::size_t>(config.epochs);

  fs::path jsonl;
  if (out_dir) {
    fs::create_directories(*out_dir);
    write_json_file(*out_dir / "config.json", to_json(config));
    jsonl = *out_dir / "snapshots.jsonl";
    std::ofstream(jsonl, std::ios::trunc);
  }

  std::vector<double> params = net.initial_params(config.seeds.init);
  std::vector<double> velocity(params.size(), 0.0);
  ad::LossTape tape(net, ad::SharingMode::Shared, config.optimizer.weight_decay);
  std::vector<std::size_t> order(n);

  for (std::size_t t = 0; t < total && !rec.failed; ++t) {
    const std::size_t epoch = t / rec.steps_per_epoch;
    const std::size_t slot = t % rec.steps_per_epoch;
    if (slot == 0) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      CounterRng rng(config.seeds.order, kOrderStream, epoch);
      for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[static_cast<std::size_t>(rng.below(i))]);
    }
    const ad::Batch batch =
        data.train_rows(std::span<const std::size_t>(order).subspan(slot * config.batch_size, config.batch_size));

    if (t % config.snapshot_every == 0) {
      const trace::ProbeBatch probes(config.seeds.probes, config.K, config.probe_kind, t);
      trace::SnapshotMeta meta{config.run_id, t, static_cast<int>(epoch) + 1, t, config.eta};
      try {
        auto snap = trace::single_pass_traces(tape, params, batch, probes, meta);
        if (!std::isfinite(snap.loss)) throw Error(ErrorCode::NonFinite, "loss is non-finite");
        if (out_dir) trace::append_jsonl(jsonl, snap);
        rec.snapshots.push_back(std::move(snap));
        ++rec.counters.snapshots;
      } catch (const Error& e) {
        if (e.code() != ErrorCode::NonFinite) throw;
        rec.failed = true;
        rec.failure = "diverged at step " + std::to_string(t) + ": " + e.detail();
        break;
      }
    }

    const double loss = tape.forward(params, batch);
    if (!std::isfinite(loss)) {
      rec.failed = true;
      rec.failure = "diverged at step " + std::to_string(t) + ": loss is non-finite";
      break;
    }
    const auto g = tape.gradient(false);
    const double lr =
        config.optimizer.cosine
            ? config.optimizer.learning_rate * 0.5 *
                  (1.0 + std::cos(std::numbers::pi * static_cast<double>(t) / static_cast<double>(total)))
            : config.optimizer.learning_rate;
    for (std::size_t i = 0; i < params.size(); ++i) {
      velocity[i] = config.optimizer.momentum * velocity[i] + g[i];
      params[i] -= lr * velocity[i];
    }
    ++rec.counters.steps;
    if (!all_finite(params)) {
      rec.failed = true;
      rec.failure = "diverged at step " + std::to_string(t) + ": parameters are non-finite";
    }
  }

  rec.counters.gradient_passes = tape.counters().gradient_passes;
  rec.counters.hvp_count = tape.counters().hvp_calls;
  if (!rec.failed) rec.final_metrics = evaluate(net, params, data);
  rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

  if (out_dir) {
    save_run(rec, *out_dir);
    save_params(params, *out_dir / "params.json");
    write_json_file(*out_dir / "metadata.json",
               {{"started_at", started_at}, {"finished_at", utc_now()}, {"wall_seconds", rec.wall_seconds}});
  }
  return rec;
}

std::vector<RunRecord> train_all(const std::vector<RunConfig>& configs, const std::optional<fs::path>& root,
                                 unsigned threads) {
  std::vector<RunRecord> out(configs.size());
  std::vector<std::exception_ptr> errors(configs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < configs.size(); i = next++) {
      try {
        out[i] = train_with_monitoring(configs[i], root ? std::optional(*root / configs[i].run_id) : std::nullopt);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, configs.size()));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < threads; ++w) pool.emplace_back(worker);
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

nlohmann::json to_json(const RunRecord& r) {
  nlohmann::json j;
  j["config"] = to_json(r.config);
  j["status"] = r.failed ? "failed" : "ok";
  j["failure"] = r.failed ? nlohmann::json(r.failure) : nlohmann::json(nullptr);
  j["steps_per_epoch"] = r.steps_per_epoch;
  j["corrupted_labels"] = r.corrupted_labels;
  j["snapshot_batch"] = "current training mini-batch";
  j["counters"] = {{"steps", r.counters.steps},
                   {"snapshots", r.counters.snapshots},
                   {"gradient_passes", r.counters.gradient_passes},
                   {"hvp_count", r.counters.hvp_count}};
  nlohmann::json steps = nlohmann::json::array(), losses = nlohmann::json::array();
  for (const auto& s : r.snapshots) {
    steps.push_back(s.meta.step);
    losses.push_back(s.loss);
  }
  j["snapshot_steps"] = steps;
  j["snapshot_loss"] = losses;
  j["final"] = r.final_metrics ? metrics_json(*r.final_metrics) : nlohmann::json(nullptr);
  return j;
}

void save_run(const RunRecord& r, const fs::path& dir) {
  fs::create_directories(dir);
  write_json_file(dir / "record.json", to_json(r));
}

RunRecord load_run(const fs::path& dir) {
  RunRecord r;
  r.config = load_run_config(dir / "config.json");
  auto loaded = trace::load_jsonl(dir / "snapshots.jsonl");
  r.snapshots = std::move(loaded.snapshots);
  // A crash between the records of one snapshot leaves it short of layers.
  const std::size_t layers = ad::Network(r.config.model()).partition().layer_count();
  if (!r.snapshots.empty() && r.snapshots.back().layers.size() < layers) {
    r.snapshots.pop_back();
  }
  r.counters.snapshots = r.snapshots.size();
  const auto record = dir / "record.json";
  if (!fs::exists(record)) {
    r.failed = true;
    r.failure = "incomplete run: record.json is missing";
    return r;
  }
  const auto j = read_json_file(record);
  try {
    r.failed = j.at("status").get<std::string>() != "ok";
    if (r.failed) r.failure = j.value("failure", std::string("failed"));
    r.steps_per_epoch = j.at("steps_per_epoch").get<std::size_t>();
    r.corrupted_labels = j.value("corrupted_labels", std::size_t{0});
    const auto& c = j.at("counters");
    r.counters.steps = c.at("steps").get<std::size_t>();
    r.counters.gradient_passes = c.at("gradient_passes").get<std::size_t>();
    r.counters.hvp_count = c.at("hvp_count").get<std::size_t>();
    if (!j.at("final").is_null()) {
      const auto& f = j["final"];
      FinalMetrics m;
      m.train_loss = f.at("train_loss").get<double>();
      m.train_accuracy = f.at("train_accuracy").get<double>();
      m.clean_train_accuracy = f.at("clean_train_accuracy").get<double>();
      m.test_accuracy = f.at("test_accuracy").get<double>();
      m.memorised_fraction = f.at("memorised_fraction").get<double>();
      r.final_metrics = m;
    }
    if (j.at("snapshot_steps").size() != r.snapshots.size()) {
      r.failed = true;
      r.failure = "snapshot stream has " + std::to_string(r.snapshots.size()) + " snapshots, record lists " +
                  std::to_string(j["snapshot_steps"].size());
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Parse, record.string() + ": " + e.what());
  }
  return r;
}

std::size_t LayerSelector::resolve(std::size_t layers) const {
  if (layers == 0) throw Error(ErrorCode::InvalidArgument, "no layers to select from");
  switch (kind) {
    case Kind::Head:
      return layers - 1;
    case Kind::Index:
      if (index >= layers) {
        throw Error(ErrorCode::InvalidArgument,
                    "layer " + std::to_string(index) + " out of range for " + std::to_string(layers) + " layers");
      }
      return index;
    case Kind::Sum:
      break;
  }
  throw Error(ErrorCode::InvalidArgument, "the sum over layers has no single index");
}

std::string LayerSelector::to_string() const {
  switch (kind) {
    case Kind::Head:
      return "head";
    case Kind::Sum:
      return "sum";
    case Kind::Index:
      break;
  }
  return std::to_string(index);
}

LayerSelector parse_layer_selector(const std::string& text) {
  if (text == "head") return {};
  if (text == "sum") return {LayerSelector::Kind::Sum, 0};
  std::size_t pos = 0;
  try {
    const auto i = std::stoull(text, &pos);
    if (pos == text.size()) return {LayerSelector::Kind::Index, static_cast<std::size_t>(i)};
  } catch (const std::exception&) {
  }
  throw Error(ErrorCode::InvalidArgument, "layer must be 'head', 'sum' or an index, got '" + text + "'");
}

namespace {

double selected(const trace::TraceSnapshot& s, const LayerSelector& layer) {
  if (layer.kind == LayerSelector::Kind::Sum) {
    return std::accumulate(s.estimates.begin(), s.estimates.end(), 0.0);
  }
  return s.estimates.at(layer.resolve(s.estimates.size()));
}

}  // namespace

monitor::Trajectory trajectory(const RunRecord& r, const LayerSelector& layer) {
  monitor::Trajectory t;
  t.run_id = r.config.run_id;
  for (const auto& s : r.snapshots) {
    t.steps.push_back(s.meta.step);
    t.epochs.push_back(s.meta.epoch);
    t.values.push_back(selected(s, layer));
  }
  return t;
}

double window_mean(const RunRecord& r, const LayerSelector& layer, std::pair<int, int> window) {
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& s : r.snapshots) {
    if (s.meta.epoch < window.first || s.meta.epoch > window.second) continue;
    sum += selected(s, layer);
    ++count;
  }
  if (count == 0) {
    throw Error(ErrorCode::InvalidArgument, "run '" + r.config.run_id + "' has no snapshots in epochs [" +
                                                std::to_string(window.first) + ", " +
                                                std::to_string(window.second) + "]");
  }
  return sum / static_cast<double>(count);
}

std::pair<int, int> middle_third(int epochs) {
  if (epochs < 1) throw Error(ErrorCode::InvalidArgument, "epochs must be positive");
  const int first = epochs / 3 + 1;
  const int last = std::max(first, (2 * epochs + 2) / 3);
  return {std::min(first, epochs), std::min(last, epochs)};
}

}  // namespace curvmon::harness
