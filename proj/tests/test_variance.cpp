#include "support/oracles.hpp"

#include "curvmon/ad/quadratic.hpp"
#include "curvmon/error.hpp"
#include "curvmon/oracle/dense_hessian.hpp"
#include "curvmon/trace/hutchinson.hpp"
#include "curvmon/variance/analytics.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace curvmon;
using namespace curvmon::ad;
using namespace curvmon::variance;
using curvmon::testing::for_each_sign_vector;
using curvmon::testing::quadratic_form;

namespace {

// Exact mean and variance of z^T H z over all 2^n sign vectors.
std::pair<double, double> enumerate_moments(const Matrix& h) {
  const auto n = static_cast<std::size_t>(h.rows());
  double s = 0.0, s2 = 0.0;
  for_each_sign_vector(n, [&](std::span<const double> z) {
    const double q = quadratic_form(h, z);
    s += q;
    s2 += q * q;
  });
  const double count = std::ldexp(1.0, static_cast<int>(n));
  const double mean = s / count;
  return {mean, s2 / count - mean * mean};
}

// All C(n, k) index subsets in lexicographic order.
std::vector<std::vector<int>> subsets(int n, int k) {
  std::vector<std::vector<int>> out;
  std::vector<int> cur;
  auto rec = [&](auto&& self, int start) -> void {
    if (static_cast<int>(cur.size()) == k) {
      out.push_back(cur);
      return;
    }
    for (int i = start; i < n; ++i) {
      cur.push_back(i);
      self(self, i + 1);
      cur.pop_back();
    }
  };
  rec(rec, 0);
  return out;
}

}  // namespace

TEST_CASE("variance_fixed_hessian: closed forms and exhaustive enumeration") {
  Matrix diag = Matrix::Zero(3, 3);
  diag.diagonal() << 1.0, -2.0, 5.0;
  const auto ds = oracle::exact_block_stats(diag);
  CHECK(variance_fixed_hessian(ds.frobenius_sq, ds.diag_sq_sum, 1) == 0.0);

  Matrix swap(2, 2);
  swap << 0.0, 1.0, 1.0, 0.0;
  const auto ss = oracle::exact_block_stats(swap);
  CHECK(variance_fixed_hessian(ss.frobenius_sq, ss.diag_sq_sum, 1) == 4.0);
  CHECK(enumerate_moments(swap).second == 4.0);

  const Matrix h = testing::random_symmetric(6, 3);
  const auto hs = oracle::exact_block_stats(h);
  const double eq5 = variance_fixed_hessian(hs.frobenius_sq, hs.diag_sq_sum, 3);
  const double enumerated = enumerate_moments(h).second / 3.0;
  CHECK(std::abs(eq5 - enumerated) <= 1e-10 * enumerated);

  CHECK_THROWS_AS(variance_fixed_hessian(-1.0, 0.0, 1), Error);
  CHECK_THROWS_AS(variance_fixed_hessian(1.0, 0.0, 0), Error);
  CHECK(variance_upper_bound(3.0, 2) == 3.0);
}

TEST_CASE("anisotropy: identity, rank one, indefinite blow-up, saddle marker") {
  CHECK(*anisotropy(5.0, 5.0) == doctest::Approx(1.0 / std::sqrt(5.0)));
  Eigen::VectorXd v(3);
  v << 1.0, -2.0, 0.5;
  const Matrix r1 = v * v.transpose();
  const auto s = oracle::exact_block_stats(r1);
  CHECK(*anisotropy(s.frobenius_sq, s.trace) == doctest::Approx(1.0).epsilon(1e-14));

  const double delta = 1e-3;
  const double f2 = 1.0 + (1.0 - delta) * (1.0 - delta);
  const double k = *anisotropy(f2, delta);
  CHECK(k == doctest::Approx(std::sqrt(f2) / delta));
  CHECK(k > 1000.0);
  CHECK_FALSE(anisotropy(2.0, 0.0).has_value());
  CHECK(relative_error_bound(1.0, 2) == doctest::Approx(1.0));

  // PSD rank r: 1/sqrt(r) <= kappa <= 1.
  for (int r = 1; r <= 5; ++r) {
    Matrix b = Matrix::Zero(6, r);
    CounterRng rng(static_cast<std::uint64_t>(r), 3);
    for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = rng.normal();
    const Matrix psd = b * b.transpose();
    const auto st = oracle::exact_block_stats(psd);
    const double kap = *anisotropy(st.frobenius_sq, st.trace);
    CHECK(kap <= 1.0 + 1e-12);
    CHECK(kap >= 1.0 / std::sqrt(static_cast<double>(r)) - 1e-12);
  }
}

TEST_CASE("k_star: deterministic batches leave K* unavailable") {
  const std::vector<std::vector<double>> same(6, std::vector<double>{1.0, 3.0, 2.0, 4.0});
  const auto k = k_star(same, {200, 1});
  CHECK(k.v_b_raw == 0.0);
  CHECK(k.v_b < 0.0);
  CHECK_FALSE(k.k_star.has_value());
  CHECK(to_json(k)["status"] == "batch-noise below resolution");

  const std::vector<std::vector<double>> flat(4, std::vector<double>(5, 7.0));
  CHECK_FALSE(k_star(flat).k_star.has_value());

  CHECK_THROWS_AS(k_star(std::vector<std::vector<double>>{{1.0, 2.0}}), Error);
  CHECK_THROWS_AS(k_star(std::vector<std::vector<double>>{{1.0, 2.0}, {1.0}}), Error);
}

TEST_CASE("k_star: hand-sized pooled moments") {
  // Batch means 2 and 5, probe variances 2 and 8 with K = 3.
  const std::vector<std::vector<double>> s{{1.0, 2.0, 3.0}, {3.0, 5.0, 7.0}};
  const auto k = k_star(s, {0, 0});
  CHECK(k.v_h1 == doctest::Approx(2.5));
  CHECK(k.v_b_raw == doctest::Approx(4.5));
  CHECK(k.v_b == doctest::Approx(4.5 - 2.5 / 3.0));
  CHECK(*k.k_star == doctest::Approx(2.5 / (4.5 - 2.5 / 3.0)));
  CHECK_FALSE(k.ci.has_value());
}

TEST_CASE("k_star: enumerable batches recover the exact ratio within the bootstrap interval") {
  const auto spec = parse_model_spec("input_dim = 2\noutput_dim = 2\nlayer = dense 3\n");
  Network net(spec);
  const auto params = net.initial_params(4);
  const Batch data = testing::random_classification_batch(12, 2, 2, 9);
  const auto all = subsets(12, 4);
  REQUIRE(all.size() == 495);

  LossTape tape(net);
  const std::size_t K = 10;
  std::vector<std::vector<std::vector<double>>> per_layer(2);
  std::vector<std::vector<double>> traces(2), v_h(2);
  for (std::size_t b = 0; b < all.size(); ++b) {
    Batch batch;
    batch.inputs.resize(4, 2);
    for (int r = 0; r < 4; ++r) {
      batch.inputs.row(r) = data.inputs.row(all[b][static_cast<std::size_t>(r)]);
      batch.labels.push_back(data.labels[static_cast<std::size_t>(all[b][static_cast<std::size_t>(r)])]);
    }
    const auto h = oracle::assemble(tape, params, batch, oracle::AssemblyMethod::BasisHvp);
    const trace::ProbeBatch probes(77, K, trace::ProbeKind::Rademacher, b);
    for (std::size_t l = 0; l < 2; ++l) {
      const auto st = oracle::exact_block_stats(h, l);
      traces[l].push_back(st.trace);
      v_h[l].push_back(variance_fixed_hessian(st.frobenius_sq, st.diag_sq_sum, 1));
      per_layer[l].push_back(trace::hutchinson_trace_block(tape, params, batch, l, probes).samples);
    }
  }

  for (std::size_t l = 0; l < 2; ++l) {
    const double n = static_cast<double>(all.size());
    double mt = 0.0, vh = 0.0;
    for (std::size_t b = 0; b < all.size(); ++b) {
      mt += traces[l][b];
      vh += v_h[l][b];
    }
    mt /= n;
    vh /= n;
    double vb = 0.0;
    for (double t : traces[l]) vb += (t - mt) * (t - mt);
    vb /= n;
    const double exact = vh / vb;

    const auto est = k_star(per_layer[l], {2000, 5});
    REQUIRE(est.k_star.has_value());
    REQUIRE(est.ci.has_value());
    CAPTURE(l);
    CAPTURE(exact);
    CAPTURE(*est.k_star);
    CHECK(est.ci->contains(exact));
    CHECK(est.ci->contains(*est.k_star));

    // Law of total variance for single-probe estimates over (batch, probe),
    // with a percentile bootstrap over batches.
    auto total_variance = [&](const std::vector<std::size_t>& pick) {
      double m1 = 0.0, m2 = 0.0, count = 0.0;
      for (std::size_t b : pick)
        for (double x : per_layer[l][b]) {
          m1 += x;
          m2 += x * x;
          count += 1.0;
        }
      return m2 / count - (m1 / count) * (m1 / count);
    };
    std::vector<double> reps;
    std::vector<std::size_t> pick(all.size());
    for (std::size_t r = 0; r < 2000; ++r) {
      CounterRng rng(123, 0, r);
      for (auto& i : pick) i = static_cast<std::size_t>(rng.below(all.size()));
      reps.push_back(total_variance(pick));
    }
    std::sort(reps.begin(), reps.end());
    CAPTURE(vh + vb);
    CHECK(reps[49] <= vh + vb);
    CHECK(vh + vb <= reps[1949]);
  }
}

TEST_CASE("variance report: oracle provenance, saddle marker, JSON and table") {
  const std::array<std::size_t, 2> sizes{2, 2};
  Matrix a = Matrix::Zero(4, 4);
  a.block(0, 0, 2, 2) << 0.0, 1.0, 1.0, 0.0;
  a.block(2, 2, 2, 2) << 2.0, 1.0, 1.0, 3.0;
  QuadraticModel q(a, sizes);
  LossTape tape(q);
  const std::vector<double> theta(4, 0.0);
  const auto h = oracle::assemble(tape, theta, Batch{}, oracle::AssemblyMethod::BasisHvp);
  const auto report = report_from_oracle(h, 10);
  REQUIRE(report.layers.size() == 2);
  CHECK_FALSE(report.layers[0].kappa.has_value());
  CHECK(report.layers[0].var_fixed_h == doctest::Approx(0.4));
  CHECK(*report.layers[1].kappa == doctest::Approx(std::sqrt(15.0) / 5.0));
  CHECK(*report.layers[1].rel_error_bound == doctest::Approx(std::sqrt(0.2) * std::sqrt(15.0) / 5.0));

  const auto j = to_json(report);
  CHECK(j["layers"][0]["kappa"].is_null());
  CHECK(j["layers"][0]["kappa_status"] == "saddle-degenerate");
  CHECK(j["layers"][1]["diag_sq_sum"] == 13.0);
  const auto table = format_table(report);
  CHECK(table.find("saddle") != std::string::npos);
  CHECK(table.find("g1") != std::string::npos);

  const auto est = layer_from_estimates(0, "head", 2.0, 8.0, 4);
  CHECK(est.var_source == Provenance::Estimated);
  CHECK(est.var_fixed_h == doctest::Approx(4.0));
  CHECK(*est.kappa == doctest::Approx(std::sqrt(2.0)));
}
