// curvmon: layer-wise curvature monitoring from the command line.
//
// Every subcommand writes JSON (or JSON lines) and exits 0 unless a
// structured error was raised; errors are printed to stderr as
// {"error": {"code": ..., "message": ...}} with exit code 1.

#include "curvmon/ad/network.hpp"
#include "curvmon/error.hpp"
#include "curvmon/harness/io.hpp"
#include "curvmon/harness/pipeline.hpp"
#include "curvmon/harness/run.hpp"
#include "curvmon/oracle/dense_hessian.hpp"
#include "curvmon/trace/hutchinson.hpp"
#include "curvmon/variance/analytics.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

namespace fs = std::filesystem;
using namespace curvmon;
using nlohmann::json;

namespace {

void emit(const json& j) { std::cout << j.dump(2) << '\n'; }

std::vector<double> params_for(const ad::Network& net, const std::string& spec) {
  // "init:<seed>" draws the network's own initialisation instead of reading a file.
  if (spec.rfind("init:", 0) == 0) return net.initial_params(std::stoull(spec.substr(5)));
  auto p = harness::load_params(spec);
  if (p.size() != net.parameter_count()) {
    throw Error(ErrorCode::ShapeMismatch, "params file has " + std::to_string(p.size()) + " values, the model needs " +
                                              std::to_string(net.parameter_count()));
  }
  return p;
}

struct TrainArgs {
  std::string config;
  std::string out;
};

int run_train(const TrainArgs& a) {
  const auto config = harness::load_run_config(a.config);
  const auto rec = harness::train_with_monitoring(config, fs::path(a.out));
  emit(harness::to_json(rec));
  if (rec.failed) throw Error(ErrorCode::NonFinite, "run '" + config.run_id + "' " + rec.failure);
  return 0;
}

struct CalibrateArgs {
  std::string runs;
  double arl0 = 1000.0;
  double k = 0.5;
  std::string out;
  std::string layer = "head";
  std::size_t sequences = 4000;
  std::uint64_t seed = 0;
  double tolerance = 0.05;
  std::vector<int> window;
};

int run_calibrate(const CalibrateArgs& a) {
  harness::Phase1Options o;
  o.arl0 = a.arl0;
  o.k = a.k;
  o.layer = harness::parse_layer_selector(a.layer);
  o.calibration.sequences = a.sequences;
  o.calibration.seed = a.seed;
  o.calibration.tolerance = a.tolerance;
  if (!a.window.empty()) o.window = std::pair{a.window.at(0), a.window.at(1)};
  const auto p = harness::calibrate_from_runs(harness::load_runs(a.runs), o);
  harness::save_phase1(p, a.out);
  for (const auto& e : p.excluded) std::cerr << json{{"warning", "excluded " + e}}.dump() << '\n';
  emit(harness::to_json(p));
  return 0;
}

struct DetectArgs {
  std::string baseline;
  std::string runs;
  std::string out;
  std::size_t bootstrap = 10000;
  std::uint64_t seed = 0;
};

int run_detect(const DetectArgs& a) {
  const auto p = harness::load_phase1(a.baseline);
  const auto table = harness::phase2_detect(p, harness::load_runs(a.runs), {a.bootstrap, a.seed});
  const auto j = harness::to_json(table);
  if (!a.out.empty()) harness::write_json_file(a.out, j);
  emit(j);
  return 0;
}

struct EstimateArgs {
  std::string model;
  std::string params;
  std::string batch;
  std::size_t K = 10;
  std::uint64_t seed = 0;
  std::string probe = "rademacher";
  bool per_layer = false;
  bool variance = false;
};

int run_estimate(const EstimateArgs& a) {
  const ad::Network net(ad::load_model_spec(a.model));
  const auto theta = params_for(net, a.params);
  const auto batch = harness::load_batch(a.batch);
  const trace::ProbeBatch probes(a.seed, a.K, trace::parse_probe_kind(a.probe));
  ad::LossTape tape(net);

  json out;
  out["model"] = net.spec().name;
  out["K"] = a.K;
  out["seed"] = a.seed;
  out["probe_kind"] = a.probe;
  out["method"] = a.per_layer ? "per-layer" : "single-pass";
  json layers = json::array();
  const auto& part = tape.partition();
  std::vector<trace::BlockEstimate> est;
  if (a.per_layer) {
    for (std::size_t l = 0; l < part.layer_count(); ++l) {
      est.push_back(trace::hutchinson_trace_block(tape, theta, batch, l, probes));
    }
    out["loss"] = tape.loss();
  } else {
    const auto snap = trace::single_pass_traces(tape, theta, batch, probes);
    out["loss"] = snap.loss;
    for (std::size_t l = 0; l < part.layer_count(); ++l) est.push_back({snap.estimates[l], snap.probe_values[l]});
  }
  for (std::size_t l = 0; l < part.layer_count(); ++l) {
    json row{{"layer", l},
             {"name", part.group(l).name},
             {"size", part.group(l).size},
             {"trace_est", est[l].estimate},
             {"standard_error", est[l].standard_error()}};
    if (a.variance) {
      const auto f = trace::frobenius_norm_sq(tape, theta, batch, l, probes);
      const auto v = variance::layer_from_estimates(l, part.group(l).name, est[l].estimate, f.estimate, a.K);
      row["frobenius_sq_est"] = f.estimate;
      row["variance_bound"] = v.var_fixed_h;
      row["kappa"] = v.kappa ? json(*v.kappa) : json(nullptr);
      row["relative_error_bound"] = v.rel_error_bound ? json(*v.rel_error_bound) : json(nullptr);
      row["variance_source"] = "estimated";
    }
    layers.push_back(std::move(row));
  }
  out["layers"] = std::move(layers);
  out["counters"] = {{"gradient_passes", tape.counters().gradient_passes}, {"hvp_count", tape.counters().hvp_calls}};
  emit(out);
  return 0;
}

struct OracleArgs {
  std::string model;
  std::string params;
  std::string batch;
  bool compare = false;
  std::size_t K = 10;
  std::size_t compare_K = 10000;
  std::uint64_t seed = 0;
  std::size_t cap = 2000;
  std::string method = "basis";
  std::string out;
};

int run_oracle(const OracleArgs& a) {
  const ad::Network net(ad::load_model_spec(a.model));
  const auto theta = params_for(net, a.params);
  const auto batch = harness::load_batch(a.batch);
  ad::LossTape tape(net);
  oracle::OracleOptions opt;
  opt.cap = a.cap;
  const auto method =
      a.method == "fd" ? oracle::AssemblyMethod::FiniteDifference : oracle::AssemblyMethod::BasisHvp;
  if (a.method != "fd" && a.method != "basis") {
    throw Error(ErrorCode::InvalidArgument, "method must be 'basis' or 'fd', got '" + a.method + "'");
  }
  const auto h = oracle::assemble(tape, theta, batch, method, opt);
  if (!a.out.empty()) oracle::write_binary(h, a.out);

  json out;
  out["model"] = net.spec().name;
  out["P"] = h.matrix.rows();
  out["method"] = a.method;
  out["asymmetry"] = h.asymmetry;
  out["trace"] = h.matrix.trace();
  out["report"] = variance::to_json(variance::report_from_oracle(h, a.K));

  if (a.compare) {
    const auto other_method =
        method == oracle::AssemblyMethod::BasisHvp ? oracle::AssemblyMethod::FiniteDifference
                                                   : oracle::AssemblyMethod::BasisHvp;
    const auto g = oracle::assemble(tape, theta, batch, other_method, opt);
    const double scale = std::max(1.0, h.matrix.cwiseAbs().maxCoeff());
    json cmp;
    cmp["assembly_max_abs_diff"] = (h.matrix - g.matrix).cwiseAbs().maxCoeff();
    cmp["assembly_scaled_diff"] = (h.matrix - g.matrix).cwiseAbs().maxCoeff() / scale;
    const trace::ProbeBatch probes(a.seed, a.compare_K);
    json layers = json::array();
    for (std::size_t l = 0; l < h.partition.layer_count(); ++l) {
      const auto st = oracle::exact_block_stats(h, l);
      const auto e = trace::hutchinson_trace_block(tape, theta, batch, l, probes);
      const double sd = std::sqrt(variance::variance_fixed_hessian(st.frobenius_sq, st.diag_sq_sum, a.compare_K));
      const double z = sd > 0.0 ? (e.estimate - st.trace) / sd : 0.0;
      layers.push_back({{"layer", l},
                        {"oracle_trace", st.trace},
                        {"estimate", e.estimate},
                        {"K", a.compare_K},
                        {"predicted_sd", sd},
                        {"z", z},
                        {"within_4sd", std::abs(z) <= 4.0}});
    }
    cmp["estimator"] = std::move(layers);
    out["compare"] = std::move(cmp);
  }
  emit(out);
  return 0;
}

struct SweepArgs {
  std::string grid;
  std::string out;
};

int run_sweep(const SweepArgs& a) {
  auto grid = harness::sweep_grid_from_json(harness::read_json_file(a.grid));
  if (!a.out.empty()) grid.out = a.out;
  emit(harness::to_json(harness::sensitivity_sweep(grid)));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Layer-wise Hessian trace estimation and curvature change detection"};
  app.require_subcommand(1);

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train one run with trace snapshots");
  t->add_option("--config", train.config, "Run config JSON")->required()->check(CLI::ExistingFile);
  t->add_option("--out", train.out, "Run output directory")->required();

  CalibrateArgs cal;
  auto* c = app.add_subcommand("calibrate", "Phase I: baseline and ARL0-calibrated threshold from clean runs");
  c->add_option("--runs", cal.runs, "Glob over run directories")->required();
  c->add_option("--arl0", cal.arl0, "Target in-control average run length (snapshots)")->capture_default_str();
  c->add_option("--k", cal.k, "CUSUM drift allowance")->capture_default_str();
  c->add_option("--out", cal.out, "Output directory")->required();
  c->add_option("--layer", cal.layer, "head | sum | layer index")->capture_default_str();
  c->add_option("--sequences", cal.sequences, "Monte Carlo sequences per ARL estimate")->capture_default_str();
  c->add_option("--seed", cal.seed, "Monte Carlo seed")->capture_default_str();
  c->add_option("--tolerance", cal.tolerance, "Relative ARL0 tolerance")->capture_default_str();
  c->add_option("--window", cal.window, "Cohen's d epoch window: first last")->expected(2);

  DetectArgs det;
  auto* d = app.add_subcommand("detect", "Phase II: run the calibrated detector over runs");
  d->add_option("--baseline", det.baseline, "Phase I output directory")->required()->check(CLI::ExistingDirectory);
  d->add_option("--runs", det.runs, "Glob over run directories")->required();
  d->add_option("--out", det.out, "Detection table JSON");
  d->add_option("--bootstrap", det.bootstrap, "Bootstrap replicates for Cohen's d")->capture_default_str();
  d->add_option("--seed", det.seed, "Bootstrap seed")->capture_default_str();

  EstimateArgs est;
  auto* e = app.add_subcommand("estimate", "Hutchinson layer traces for one (model, params, batch)");
  e->add_option("--model", est.model, "Model spec file")->required()->check(CLI::ExistingFile);
  e->add_option("--params", est.params, "Params JSON, or init:<seed>")->required();
  e->add_option("--batch", est.batch, "Batch JSON")->required()->check(CLI::ExistingFile);
  e->add_option("--K", est.K, "Probes")->capture_default_str();
  e->add_option("--seed", est.seed, "Probe seed")->capture_default_str();
  e->add_option("--probe", est.probe, "rademacher | gaussian")->capture_default_str();
  e->add_flag("--per-layer", est.per_layer, "One probe set per layer instead of the single pass");
  e->add_flag("--variance", est.variance, "Also estimate ||H_l||_F^2 and the variance bound");

  OracleArgs orc;
  auto* o = app.add_subcommand("oracle", "Dense Hessian, exact layer statistics");
  o->add_option("--model", orc.model, "Model spec file")->required()->check(CLI::ExistingFile);
  o->add_option("--params", orc.params, "Params JSON, or init:<seed>")->required();
  o->add_option("--batch", orc.batch, "Batch JSON")->required()->check(CLI::ExistingFile);
  o->add_flag("--compare", orc.compare, "Cross-check assemblies and the estimator against the oracle");
  o->add_option("--K", orc.K, "K for the reported estimator variance")->capture_default_str();
  o->add_option("--compare-K", orc.compare_K, "Probes for the estimator comparison")->capture_default_str();
  o->add_option("--seed", orc.seed, "Probe seed")->capture_default_str();
  o->add_option("--cap", orc.cap, "Largest P to assemble")->capture_default_str();
  o->add_option("--method", orc.method, "basis | fd")->capture_default_str();
  o->add_option("--out", orc.out, "Write the Hessian in binary form");

  SweepArgs sw;
  auto* s = app.add_subcommand("sweep", "Sensitivity of detection to (k, ARL0)");
  s->add_option("--grid", sw.grid, "Sweep grid JSON")->required()->check(CLI::ExistingFile);
  s->add_option("--out", sw.out, "Output directory (overrides the grid's)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*t) return run_train(train);
    if (*c) return run_calibrate(cal);
    if (*d) return run_detect(det);
    if (*e) return run_estimate(est);
    if (*o) return run_oracle(orc);
    if (*s) return run_sweep(sw);
  } catch (const Error& err) {
    std::cerr << json{{"error", {{"code", std::string(to_string(err.code()))}, {"message", err.detail()}}}}.dump()
              << '\n';
    return 1;
  } catch (const std::exception& err) {
    std::cerr << json{{"error", {{"code", "Internal"}, {"message", err.what()}}}}.dump() << '\n';
    return 1;
  }
  return 1;
}
