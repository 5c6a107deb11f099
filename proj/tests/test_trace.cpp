#include "support/oracles.hpp"

#include "curvmon/ad/quadratic.hpp"
#include "curvmon/error.hpp"
#include "curvmon/oracle/dense_hessian.hpp"
#include "curvmon/trace/hutchinson.hpp"
#include "curvmon/trace/snapshot_io.hpp"

#include <doctest.h>

#include <array>
#include <cmath>
#include <sstream>

using namespace curvmon;
using namespace curvmon::ad;
using namespace curvmon::trace;
using curvmon::testing::for_each_sign_vector;
using curvmon::testing::quadratic_form;
using curvmon::testing::random_classification_batch;

namespace {

Matrix swap2() {
  Matrix a(2, 2);
  a << 0.0, 1.0, 1.0, 0.0;
  return a;
}

struct TinyMlp {
  Network net{parse_model_spec("input_dim = 3\noutput_dim = 2\nlayer = dense 4\n")};
  std::vector<double> params = net.initial_params(11);
  Batch batch = random_classification_batch(6, 3, 2, 5);
};

// Fixed-Hessian variance with K = 1, from an oracle block.
double single_probe_variance(const oracle::BlockStats& s) { return 2.0 * (s.frobenius_sq - s.diag_sq_sum); }

}  // namespace

TEST_CASE("probes: deterministic, sliceable, valued as declared") {
  ProbeBatch a(42, 3);
  ProbeBatch b(42, 3);
  CHECK(a.probe(2, 200) == b.probe(2, 200));
  CHECK(a.probe(0, 200) != a.probe(1, 200));
  CHECK(ProbeBatch(42, 3, ProbeKind::Rademacher, 1).probe(0, 64) != a.probe(0, 64));

  const auto full = a.probe(1, 200);
  std::vector<double> slice(70);
  a.fill(1, 65, slice);
  CHECK(std::equal(slice.begin(), slice.end(), full.begin() + 65));
  for (double x : full) CHECK((x == 1.0 || x == -1.0));

  ProbeBatch g(7, 1, ProbeKind::Gaussian);
  const auto gz = g.probe(0, 1 << 15);
  std::vector<double> gs(40);
  g.fill(0, 1000, gs);
  CHECK(std::equal(gs.begin(), gs.end(), gz.begin() + 1000));
  double m = 0.0, m2 = 0.0;
  for (double x : gz) {
    m += x;
    m2 += x * x;
  }
  m /= static_cast<double>(gz.size());
  m2 /= static_cast<double>(gz.size());
  CHECK(std::abs(m) < 4.0 / std::sqrt(static_cast<double>(gz.size())));
  CHECK(std::abs(m2 - 1.0) < 4.0 * std::sqrt(2.0 / static_cast<double>(gz.size())));

  CHECK_THROWS_AS(ProbeBatch(1, 0), Error);
  CHECK_THROWS_AS(a.fill(3, 0, slice), Error);
  CHECK(parse_probe_kind(to_string(ProbeKind::Gaussian)) == ProbeKind::Gaussian);
}

TEST_CASE("hutchinson_trace_block: identity block is exact") {
  const std::array<std::size_t, 2> sizes{4, 2};
  Matrix a = Matrix::Identity(6, 6);
  a.block(4, 4, 2, 2) = swap2();
  QuadraticModel q(a, sizes);
  LossTape tape(q);
  const std::vector<double> theta(6, 0.1);
  const auto est = hutchinson_trace_block(tape, theta, Batch{}, 0, ProbeBatch(3, 25));
  CHECK(est.estimate == 4.0);
  CHECK(est.sample_variance() == 0.0);
  for (double s : est.samples) CHECK(s == 4.0);
}

TEST_CASE("hutchinson_trace_block: swap block samples are +-2 and enumerate to 0") {
  const std::array<std::size_t, 1> sizes{2};
  QuadraticModel q(swap2(), sizes);
  LossTape tape(q);
  const std::array<double, 2> theta{0.0, 0.0};
  const ProbeBatch probes(9, 64);
  const auto est = hutchinson_trace_block(tape, theta, Batch{}, 0, probes);
  for (std::size_t k = 0; k < probes.count(); ++k) {
    CHECK(std::abs(est.samples[k]) == 2.0);
    CHECK(est.samples[k] == quadratic_form(swap2(), probes.probe(k, 2)));
  }
  double total = 0.0;
  for_each_sign_vector(2, [&](std::span<const double> z) { total += quadratic_form(swap2(), z); });
  CHECK(total == 0.0);
}

TEST_CASE("hutchinson_trace_block: tiny MLP within four standard deviations of the oracle") {
  TinyMlp m;
  LossTape tape(m.net);
  const auto h = oracle::assemble(tape, m.params, m.batch, oracle::AssemblyMethod::BasisHvp);
  const std::size_t K = 10000;
  for (std::size_t l = 0; l < h.partition.layer_count(); ++l) {
    const auto stats = oracle::exact_block_stats(h, l);
    const auto est = hutchinson_trace_block(tape, m.params, m.batch, l, ProbeBatch(100 + l, K));
    const double sd = std::sqrt(single_probe_variance(stats) / static_cast<double>(K));
    CHECK(std::abs(est.estimate - stats.trace) <= 4.0 * sd);
  }
}

TEST_CASE("single_pass_traces: block-diagonal quadratic equals per-block estimates") {
  const std::array<std::size_t, 2> sizes{3, 2};
  Matrix a = Matrix::Zero(5, 5);
  a.block(0, 0, 3, 3) = testing::random_symmetric(3, 4);
  a.block(3, 3, 2, 2) = testing::random_symmetric(2, 5);
  QuadraticModel q(a, sizes);
  LossTape tape(q);
  const std::vector<double> theta(5, 0.2);
  const ProbeBatch probes(17, 40);
  const auto snap = single_pass_traces(tape, theta, Batch{}, probes);
  for (std::size_t l = 0; l < 2; ++l) {
    const auto block = hutchinson_trace_block(tape, theta, Batch{}, l, probes);
    CHECK(snap.probe_values[l] == block.samples);
    CHECK(snap.estimates[l] == block.estimate);
  }
}

TEST_CASE("single_pass_traces: exhaustive sign enumeration recovers every block trace") {
  const std::array<std::size_t, 3> sizes{4, 5, 3};
  const Matrix a = testing::random_symmetric(12, 31);
  QuadraticModel q(a, sizes);
  LossTape tape(q);
  const std::vector<double> theta(12, 0.0);
  prepare(tape, theta, Batch{});
  std::vector<double> sums(3, 0.0);
  for_each_sign_vector(12, [&](std::span<const double> z) {
    const auto qf = layer_quadratic_forms(tape, z);
    for (std::size_t l = 0; l < 3; ++l) sums[l] += qf[l];
  });
  std::size_t off = 0;
  for (std::size_t l = 0; l < 3; ++l) {
    const double exact = a.block(static_cast<Eigen::Index>(off), static_cast<Eigen::Index>(off),
                                 static_cast<Eigen::Index>(sizes[l]), static_cast<Eigen::Index>(sizes[l]))
                             .trace();
    CHECK(std::abs(sums[l] / 4096.0 - exact) <= 1e-12 * std::max(1.0, std::abs(exact)));
    off += sizes[l];
  }
}

TEST_CASE("single_pass_traces: records metadata and is bit-reproducible") {
  TinyMlp m;
  LossTape tape(m.net);
  SnapshotMeta meta{"run-a", 300, 4, 12, 0.4};
  const auto s1 = single_pass_traces(tape, m.params, m.batch, ProbeBatch(5, 8, ProbeKind::Rademacher, 300), meta);
  LossTape other(m.net);
  const auto s2 = single_pass_traces(other, m.params, m.batch, ProbeBatch(5, 8, ProbeKind::Rademacher, 300), meta);
  CHECK(s1.estimates == s2.estimates);
  CHECK(s1.probe_values == s2.probe_values);
  CHECK(s1.layers == std::vector<std::string>{"dense0", "head"});
  CHECK(s1.K == 8);
  CHECK(s1.seed == 5);
  CHECK(s1.meta.run_id == "run-a");
  CHECK(s1.loss == doctest::Approx(tape.loss()));
  CHECK(tape.counters().hvp_calls == 8);
}

TEST_CASE("frobenius_norm_sq: closed forms and tiny MLP") {
  const std::array<std::size_t, 2> sizes{3, 2};
  Matrix a = Matrix::Zero(5, 5);
  a.block(0, 0, 3, 3) = Matrix::Identity(3, 3);
  a.block(3, 3, 2, 2) = swap2();
  QuadraticModel q(a, sizes);
  LossTape tape(q);
  const std::vector<double> theta(5, 0.0);
  const ProbeBatch probes(2, 16);
  for (double s : frobenius_norm_sq(tape, theta, Batch{}, 0, probes).samples) CHECK(s == 3.0);
  const auto sw = frobenius_norm_sq(tape, theta, Batch{}, 1, probes);
  for (double s : sw.samples) CHECK(s == 2.0);
  CHECK(sw.estimate == 2.0);

  TinyMlp m;
  LossTape mt(m.net);
  const auto h = oracle::assemble(mt, m.params, m.batch, oracle::AssemblyMethod::BasisHvp);
  for (std::size_t l = 0; l < h.partition.layer_count(); ++l) {
    const auto est = frobenius_norm_sq(mt, m.params, m.batch, l, ProbeBatch(900 + l, 10000));
    CHECK(std::abs(est.estimate - oracle::exact_block_stats(h, l).frobenius_sq) <= 4.0 * est.standard_error());
  }
}

TEST_CASE("quadratic forms that overflow are reported with the probe index") {
  const std::array<std::size_t, 1> sizes{2};
  Matrix a(2, 2);
  a << 1e308, 1e308, 1e308, 1e308;
  QuadraticModel q(a, sizes);
  LossTape tape(q);
  const std::array<double, 2> theta{0.0, 0.0};
  try {
    hutchinson_trace_block(tape, theta, Batch{}, 0, ProbeBatch(1, 50));
    FAIL("expected NonFinite");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NonFinite);
    CHECK(std::string(e.what()).find("probe") != std::string::npos);
  }
}

TEST_CASE("unrolling bias: scalar tied model drops exactly the cross term") {
  // L = (w w x - y)^2 at x = 1, y = 0, w = 1: shared d2L/dw2 = 12, unrolled
  // diagonal 2 + 2, cross term 2 * 4.
  testing::TiedScalarModel model(1.0, 0.0);
  const std::array<double, 1> w{1.0};
  const auto r = unrolling_bias_experiment(model, w, Batch{}, 0, ProbeBatch(8, 10));
  CHECK(r.uses == 2);
  CHECK(r.shared_estimate == doctest::Approx(12.0).epsilon(1e-12));
  CHECK(r.unrolled_estimate == doctest::Approx(4.0).epsilon(1e-12));
  CHECK(r.oracle_gap == doctest::Approx(8.0).epsilon(1e-12));
  CHECK(r.gap == doctest::Approx(r.oracle_gap).epsilon(1e-12));
  CHECK(r.within_error);
}

TEST_CASE("unrolling bias: single use gives a zero gap, no tied layer is an error") {
  auto spec = mlp_tied(3, 2, 4, 1);
  Network once(spec);
  const auto p = once.initial_params(1);
  const auto batch = random_classification_batch(5, 3, 2, 2);
  const auto r = unrolling_bias_experiment(once, p, batch, ProbeBatch(3, 20));
  CHECK(r.uses == 1);
  CHECK(r.gap == 0.0);
  CHECK(r.oracle_gap == 0.0);

  Network plain(mlp_small(3, 2));
  CHECK_THROWS_AS(unrolling_bias_experiment(plain, plain.initial_params(1), batch, ProbeBatch(3, 20)), Error);
}

TEST_CASE("unrolling bias: two-use dense layer, gap sign follows the oracle") {
  // A width-1 tied layer keeps the cross-instance trace large relative to the
  // probe noise of the paired difference; the two seeds give opposite signs.
  Network net(mlp_tied(3, 2, 1, 2));
  const auto batch = random_classification_batch(8, 3, 2, 3);
  int signs = 0;
  for (std::uint64_t seed : {1, 3}) {
    const auto r = unrolling_bias_experiment(net, net.initial_params(seed), batch, ProbeBatch(4, 4000));
    CHECK(r.uses == 2);
    CHECK(std::abs(r.oracle_gap) > 4.0 * r.gap_standard_error);
    CHECK((r.gap > 0.0) == (r.oracle_gap > 0.0));
    CHECK(r.within_error);
    signs += r.oracle_gap > 0.0 ? 1 : -1;
  }
  CHECK(signs == 0);
}

TEST_CASE("Gaussian probes have larger variance than Rademacher off the diagonal") {
  const std::array<std::size_t, 1> sizes{6};
  const Matrix a = testing::random_symmetric(6, 12);
  QuadraticModel q(a, sizes);
  LossTape tape(q);
  const std::vector<double> theta(6, 0.0);
  const auto rad = hutchinson_trace_block(tape, theta, Batch{}, 0, ProbeBatch(1, 10000));
  const auto gau = hutchinson_trace_block(tape, theta, Batch{}, 0, ProbeBatch(1, 10000, ProbeKind::Gaussian));
  CHECK(gau.sample_variance() > rad.sample_variance());
  CHECK(std::abs(gau.estimate - a.trace()) <= 4.0 * gau.standard_error());
}

TEST_CASE("snapshot JSONL: round trip and truncated tails") {
  TinyMlp m;
  LossTape tape(m.net);
  std::ostringstream out;
  std::vector<TraceSnapshot> snaps;
  for (std::uint64_t step : {0, 10, 20}) {
    snaps.push_back(single_pass_traces(tape, m.params, m.batch, ProbeBatch(3, 4, ProbeKind::Rademacher, step),
                                       SnapshotMeta{"r0", step, 1 + static_cast<int>(step / 10), step, 0.25}));
    write_jsonl(out, snaps.back());
  }
  const std::string text = out.str();
  std::istringstream in(text);
  const auto back = read_jsonl(in);
  REQUIRE(back.snapshots.size() == 3);
  CHECK_FALSE(back.truncated_tail);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back.snapshots[i].estimates == snaps[i].estimates);
    CHECK(back.snapshots[i].probe_values == snaps[i].probe_values);
    CHECK(back.snapshots[i].layers == snaps[i].layers);
    CHECK(back.snapshots[i].meta.epoch == snaps[i].meta.epoch);
    CHECK(back.snapshots[i].loss == snaps[i].loss);
  }

  std::size_t boundaries = 0;
  for (std::size_t cut = 0; cut <= text.size(); ++cut) {
    std::istringstream part(text.substr(0, cut));
    const bool at_boundary = cut == 0 || text[cut - 1] == '\n';
    const auto loaded = read_jsonl(part);
    CHECK(loaded.truncated_tail == (!at_boundary && text[cut - 1] != '}'));
    if (at_boundary) ++boundaries;
  }
  CHECK(boundaries == 7);

  std::istringstream broken("{\"run_id\": 1}\n{}\n");
  CHECK_THROWS_AS(read_jsonl(broken), Error);
}

TEST_CASE("single_pass_traces: per-layer variance adds the cross-layer Frobenius mass") {
  // q_l = z_l^T H_l z_l + sum_{m != l} z_l^T H_lm z_m; the cross terms are
  // zero-mean and uncorrelated, each contributing ||H_lm||_F^2.
  TinyMlp m;
  LossTape tape(m.net);
  const auto h = oracle::assemble(tape, m.params, m.batch, oracle::AssemblyMethod::BasisHvp);
  const std::size_t K = 20000;
  const auto snap = single_pass_traces(tape, m.params, m.batch, ProbeBatch(61, K));
  const std::size_t L = h.partition.layer_count();
  for (std::size_t l = 0; l < L; ++l) {
    double expected = single_probe_variance(oracle::exact_block_stats(h, l));
    for (std::size_t o = 0; o < L; ++o)
      if (o != l) expected += oracle::cross_block(h, l, o).squaredNorm();
    const auto& q = snap.probe_values[l];
    double mean = 0.0;
    for (double x : q) mean += x;
    mean /= static_cast<double>(K);
    double m2 = 0.0, m4 = 0.0;
    for (double x : q) {
      const double d = (x - mean) * (x - mean);
      m2 += d;
      m4 += d * d;
    }
    m2 /= static_cast<double>(K - 1);
    m4 /= static_cast<double>(K);
    const double se = std::sqrt((m4 - m2 * m2) / static_cast<double>(K));
    CAPTURE(l);
    CHECK(std::abs(m2 - expected) <= 4.0 * se);
    CHECK(std::abs(snap.estimates[l] - oracle::exact_block_stats(h, l).trace) <= 4.0 * std::sqrt(expected / K));
  }
}
