#include <doctest.h>

#include "fixtures.hpp"
#include "ivgen/diagnostics.hpp"

using namespace ivgen;

namespace {

NsdeModel small_model(Eigen::Index d, std::uint64_t seed, Eigen::Index lag = 3) {
  Rng rng(seed);
  NsdeShape shape;
  shape.state_dim = d;
  shape.hidden_dim = 4;
  shape.lag = lag;
  shape.n_layers = 1;
  shape.eps = 0.05;
  auto model = make_model(shape, rng);
  model.diff_net.params() *= 0.3;
  return model;
}

// A series drawn from the model itself: origin rows followed by one simulated path.
Matrix simulate_series(const NsdeModel& model, Eigen::Index length, std::uint64_t seed) {
  Rng rng(seed);
  const Matrix origin = standard_normals(rng, model.lag * model.state_dim()).reshaped(model.lag, model.state_dim());
  const auto scen = generate_paths(model, origin, length, 1, seed);
  Matrix out(model.lag + length, model.state_dim());
  out.topRows(model.lag) = origin;
  out.bottomRows(length) = model.denormalize(scen.path(0));
  return out;
}

}  // namespace

TEST_CASE("KS statistic") {
  for (std::size_t n : {10u, 100u, 1000u}) {
    std::vector<double> grid;
    for (std::size_t k = 1; k <= n; ++k) grid.push_back((k - 0.5) / static_cast<double>(n));
    const auto r = ks_uniform(grid);
    CHECK(r.statistic <= 1.5 / static_cast<double>(n) + 1e-15);
    CHECK_FALSE(r.reject_5pct);
  }
  const auto single = ks_uniform({0.5});
  CHECK(single.statistic == doctest::Approx(0.5));
  const auto bunched = ks_uniform(std::vector<double>(500, 0.9));
  CHECK(bunched.statistic == doctest::Approx(0.9));
  CHECK(bunched.reject_1pct);
  CHECK(bunched.n == 500u);
}

TEST_CASE("PIT autocorrelations") {
  Rng rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  PitSeries noise{Matrix(2000, 5)};
  for (Eigen::Index i = 0; i < noise.u.size(); ++i) noise.u.data()[i] = u(rng);
  const Matrix acf = pit_acf(noise, 20);
  CHECK(acf.rows() == 5);
  CHECK(acf.cols() == 20);
  const double band = 2.0 / std::sqrt(2000.0);
  CHECK((acf.array().abs() < band).count() >= static_cast<Eigen::Index>(0.95 * 100) - 2);

  PitSeries ramp{Matrix(500, 2)};
  for (Eigen::Index t = 0; t < 500; ++t) {
    ramp.u(t, 0) = (t + 0.5) / 500.0;
    ramp.u(t, 1) = 0.3;
  }
  std::vector<Eigen::Index> constant;
  const Matrix a = pit_acf(ramp, 3, &constant);
  CHECK(a(0, 0) > 0.99);
  CHECK(std::isnan(a(1, 0)));
  CHECK(constant == std::vector<Eigen::Index>{1});
}

TEST_CASE("pairwise sums cover every unordered pair") {
  const auto model = small_model(36, 1, 2);
  Rng rng(2);
  const Matrix series = standard_normals(rng, 6 * 36).reshaped(6, 36);
  const auto pairs = pairwise_sum_pit_ks(model, series);
  CHECK(pairs.size() == 630u);
  for (const auto& p : pairs) CHECK(p.i < p.j);
  CHECK(pairs.front().i == 0);
  CHECK(pairs.front().j == 1);
  CHECK(pairs.back().i == 34);
}

TEST_CASE("pairwise KS size on data simulated from the model") {
  std::size_t rejections = 0, tests = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto model = small_model(4, 1000 + seed);
    for (const auto& p : pairwise_sum_pit_ks(model, simulate_series(model, 300, seed))) {
      rejections += p.ks.reject_5pct;
      ++tests;
    }
  }
  const double rate = static_cast<double>(rejections) / static_cast<double>(tests);
  CHECK(rate >= 0.02);
  CHECK(rate <= 0.08);
}

TEST_CASE("pair with a degenerate partner reduces to the univariate PIT") {
  auto model = small_model(3, 77);
  model.eps = 1e-24;
  // Feature 0: no drift and no diffusion loading.
  model.drift_net.params()(model.drift_net.head_b_offset()) = 0.0;
  model.diff_net.params()(model.diff_net.head_b_offset()) = 0.0;
  for (Eigen::Index k = 0; k < model.diff_net.hidden_dim(); ++k) {
    model.drift_net.params()(model.drift_net.head_w_offset() + k * 3) = 0.0;
    model.diff_net.params()(model.diff_net.head_w_offset() + k * 6) = 0.0;
  }
  Rng rng(5);
  Matrix series = standard_normals(rng, 200 * 3).reshaped(200, 3);
  series.col(0).setConstant(0.25);
  const auto pairs = pairwise_sum_pit_ks(model, series);
  const auto uni = univariate_pit_ks(pit_sequence(model, series));
  CHECK(pairs[0].j == 1);
  CHECK(pairs[0].ks.statistic == doctest::Approx(uni[1].statistic).epsilon(1e-6));
  CHECK(pairs[1].ks.statistic == doctest::Approx(uni[2].statistic).epsilon(1e-6));
}

TEST_CASE("rolling correlations") {
  Matrix s(50, 3);
  Rng rng(9);
  s.col(0) = standard_normals(rng, 50);
  s.col(1) = 2.0 * s.col(0).array() + 1.0;
  s.col(2).setConstant(1.0);
  const auto c = rolling_correlations(s, 0, 1, 10);
  CHECK(c.values.size() == 41u);
  for (double v : c.values) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(rolling_correlations(s, 0, 1, 30).values.size() == 21u);
  const auto flat = rolling_correlations(s, 0, 2, 10);
  CHECK(flat.values.empty());
  CHECK(flat.skipped == 41u);
  CHECK_THROWS_AS(rolling_correlations(s, 0, 1, 51), Error);

  ScenarioSet scen;
  scen.n_scenarios = 3;
  scen.n_steps = 12;
  scen.state_dim = 3;
  for (int k = 0; k < 3; ++k) {
    for (Eigen::Index t = 0; t < 12; ++t) {
      for (Eigen::Index j = 0; j < 3; ++j) scen.paths.push_back(s(t + k, j));
    }
  }
  CHECK(rolling_correlations(scen, 0, 1, 10).values.size() == 9u);
}

TEST_CASE("observed level factor moves against the price") {
  const fixture::Pipeline p(400, 21);
  const auto m = p.fpca.n_components();
  for (Eigen::Index e = 0; e < 2; ++e) {
    const auto c = rolling_correlations(p.series.states, e * m, p.series.price_column(static_cast<std::size_t>(e)), 30);
    const auto negative = std::count_if(c.values.begin(), c.values.end(), [](double v) { return v < 0.0; });
    CHECK(static_cast<double>(negative) > 0.5 * static_cast<double>(c.values.size()));
  }
}

TEST_CASE("histogram and report") {
  const auto h = histogram({-1.0, -0.5, 0.0, 0.49, 0.5, 1.0}, -1.0, 1.0, 4);
  CHECK(h.edges.size() == 5u);
  CHECK(h.counts == std::vector<std::size_t>{1, 1, 2, 2});

  const fixture::Pipeline p;
  const auto scen = generate_paths(p.model, p.origin(), 30, 5, 1);
  DiagnosticsOptions opts;
  opts.max_lag = 5;
  const auto report = diagnostics_report(p.model, p.series, &scen, opts);
  const auto d = static_cast<std::size_t>(p.series.states.cols());
  CHECK(report.at("pit_acf").at("values").size() == d);
  CHECK(report.at("pairwise_ks").at("tests").size() == d * (d - 1) / 2);
  CHECK(report.contains("rolling_correlations"));
  CHECK(diagnostics_report(p.model, p.series, &scen, opts) == report);
}
