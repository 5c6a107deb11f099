#include "curvmon/ad/loss_tape.hpp"
#include "curvmon/ad/network.hpp"
#include "curvmon/harness/dataset.hpp"
#include "curvmon/monitor/calibration.hpp"
#include "curvmon/trace/hutchinson.hpp"
#include "curvmon/trace/probes.hpp"

#include <benchmark/benchmark.h>

#include <numeric>

using namespace curvmon;

namespace {

struct Fixture {
  ad::Network net{ad::mlp_small(8, 4)};
  std::vector<double> params = net.initial_params(1);
  ad::Batch batch;

  explicit Fixture(std::size_t rows) {
    harness::DatasetSpec spec;
    const auto data = harness::make_dataset(spec);
    std::vector<std::size_t> idx(rows);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    batch = data.train_rows(idx);
  }
};

void BM_Gradient(benchmark::State& state) {
  Fixture f(static_cast<std::size_t>(state.range(0)));
  ad::LossTape tape(f.net);
  for (auto _ : state) {
    tape.forward(f.params, f.batch);
    benchmark::DoNotOptimize(tape.gradient(false));
  }
}
BENCHMARK(BM_Gradient)->Arg(16)->Arg(32)->Arg(64)->Unit(benchmark::kMicrosecond);

void BM_Hvp(benchmark::State& state) {
  Fixture f(static_cast<std::size_t>(state.range(0)));
  ad::LossTape tape(f.net);
  trace::prepare(tape, f.params, f.batch);
  const auto z = trace::ProbeBatch(3, 1).probe(0, tape.dim());
  for (auto _ : state) benchmark::DoNotOptimize(tape.hvp(z));
}
BENCHMARK(BM_Hvp)->Arg(16)->Arg(32)->Arg(64)->Unit(benchmark::kMicrosecond);

// One monitoring snapshot: gradient with retained record plus K HVPs.
void BM_SinglePassTraces(benchmark::State& state) {
  Fixture f(32);
  ad::LossTape tape(f.net);
  const trace::ProbeBatch probes(3, static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(trace::single_pass_traces(tape, f.params, f.batch, probes));
}
BENCHMARK(BM_SinglePassTraces)->Arg(1)->Arg(10)->Arg(100)->Unit(benchmark::kMillisecond);

void BM_ArlEstimate(benchmark::State& state) {
  const auto sampler = monitor::ResidualSampler::standard_normal();
  for (auto _ : state) {
    benchmark::DoNotOptimize(monitor::estimate_arl(sampler, 0.5, 5.8, static_cast<std::size_t>(state.range(0)), 0,
                                                   50000));
  }
}
BENCHMARK(BM_ArlEstimate)->Arg(100)->Arg(1000)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
