#include <doctest.h>

#include "fixtures.hpp"
#include "ivgen/generator.hpp"

#include <sstream>

using namespace ivgen;

namespace {

NsdeModel zero_model(Eigen::Index d, Eigen::Index lag, double dt) {
  Rng rng(0);
  NsdeShape shape;
  shape.state_dim = d;
  shape.hidden_dim = 3;
  shape.lag = lag;
  shape.n_layers = 1;
  shape.dt = dt;
  auto model = make_model(shape, rng);
  model.drift_net.params().setZero();
  model.diff_net.params().setZero();
  return model;
}

}  // namespace

TEST_CASE("zero nets produce a Gaussian random walk") {
  const auto model = zero_model(2, 3, 0.5);
  Matrix origin(3, 2);
  origin << 0, 0, 1, 1, 0.3, -0.4;
  const Eigen::Index n = 10000, steps = 5;
  const auto scen = generate_paths(model, origin, steps, n, 99);
  for (Eigen::Index k = 0; k < steps; ++k) {
    Vector mean = Vector::Zero(2);
    Vector sq = Vector::Zero(2);
    for (Eigen::Index s = 0; s < n; ++s) {
      const Vector x = scen.state(s, k) - origin.row(2).transpose();
      mean += x;
      sq += x.cwiseProduct(x);
    }
    mean /= static_cast<double>(n);
    const double var = 1e-3 * 0.5 * static_cast<double>(k + 1);
    CHECK(mean.cwiseAbs().maxCoeff() < 3.0 * std::sqrt(var / n));
    CHECK((sq / static_cast<double>(n)).maxCoeff() == doctest::Approx(var).epsilon(0.05));
  }
}

TEST_CASE("determinism and thread-count independence") {
  const fixture::Pipeline p;
  const auto a = generate_paths(p.model, p.origin(), 4, 150, 17, 1);
  const auto b = generate_paths(p.model, p.origin(), 4, 150, 17, 4);
  CHECK(a.paths == b.paths);
  const auto single = generate_paths(p.model, p.origin(), 4, 1, 17);
  const auto again = generate_paths(p.model, p.origin(), 4, 1, 17);
  CHECK(single.paths == again.paths);
  // A scenario's path depends only on (seed, scenario index), up to batch-width rounding.
  for (std::size_t i = 0; i < single.paths.size(); ++i) CHECK(std::abs(single.paths[i] - a.paths[i]) < 1e-10);
  const auto other = generate_paths(p.model, p.origin(), 4, 1, 18);
  CHECK(other.paths != single.paths);
  CHECK_THROWS_AS(generate_paths(p.model, p.origin(), 0, 1, 1), Error);
  CHECK_THROWS_AS(generate_paths(p.model, p.origin(), 1, 0, 1), Error);
}

TEST_CASE("first step is drawn from the conditional law of the origin") {
  const fixture::Pipeline p;
  const auto c = cond_step(p.model, p.origin());
  const Eigen::Index n = 4000;
  const auto scen = generate_paths(p.model, p.origin(), 1, n, 5);
  const Eigen::Index d = scen.state_dim;
  Matrix x(n, d);
  for (Eigen::Index s = 0; s < n; ++s) x.row(s) = scen.state(s, 0).transpose();
  const Vector mean = x.colwise().mean().transpose();
  for (Eigen::Index j = 0; j < d; ++j) CHECK(std::abs(mean(j) - c.mu(j)) < 4.0 * std::sqrt(c.sigma(j, j) / n));

  // Innovations whitened by the conditional covariance are uncorrelated across scenarios.
  const Eigen::LLT<Matrix> llt(c.sigma);
  Matrix z(n, d);
  for (Eigen::Index s = 0; s < n; ++s) z.row(s) = llt.matrixL().solve(x.row(s).transpose() - c.mu).transpose();
  double lag1 = 0.0;
  for (Eigen::Index s = 0; s + 1 < n; ++s) lag1 += z(s, 0) * z(s + 1, 0);
  CHECK(std::abs(lag1 / static_cast<double>(n - 1)) < 3.0 / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("decoding the identity path reproduces the origin surface") {
  const fixture::Pipeline p;
  const SurfaceDecoder decoder(p.model, p.fpca, p.transforms);
  const Eigen::Index t0 = p.last_index();
  const Vector last = p.series.states.row(t0).transpose();
  ScenarioSet scen;
  scen.n_steps = 2;
  scen.n_scenarios = 1;
  scen.state_dim = last.size();
  scen.origin_window = p.model.normalize(p.origin());
  scen.origin_time_index = t0;
  const Vector norm = p.model.normalize(last.transpose()).row(0).transpose();
  for (int k = 0; k < 2; ++k) scen.paths.insert(scen.paths.end(), norm.data(), norm.data() + norm.size());
  const auto decoded = decode_scenarios(scen, decoder);
  CHECK(decoded.surface(0, 0, 0).rows() == 11);
  CHECK(decoded.surface(0, 0, 0).cols() == 17);
  const auto grid = decoder.grid();
  const auto m = p.fpca.n_components();
  for (Eigen::Index e = 0; e < 2; ++e) {
    const Vector b = last.segment(e * m, m);
    const auto& spec = p.transforms.per_equity[static_cast<std::size_t>(e)];
    for (std::size_t i = 0; i < grid.taus.size(); ++i) {
      for (std::size_t j = 0; j < grid.deltas.size(); ++j) {
        const double x = tau_forward(grid.taus[i], p.transforms.tau_max);
        const double y = delta_forward(grid.deltas[j]);
        const double want = iv_inverse(spec, reconstruct_surface(p.fpca, b, x, y));
        CHECK(std::abs(decoded.surface(0, 0, e)(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) - want) < 1e-10);
      }
    }
    // Trend re-added one step past the origin.
    CHECK(decoder.price(last, e, static_cast<double>(t0)) == doctest::Approx(p.raw.cell(t0, e).price).epsilon(1e-10));
    CHECK(decoded.spot(0, 0, e) ==
          doctest::Approx(price_inverse(spec, last(p.series.price_column(e)), static_cast<double>(t0 + 1))).epsilon(1e-12));
  }
}

TEST_CASE("decode then re-encode recovers the scores") {
  const fixture::Pipeline p;
  const SurfaceDecoder decoder(p.model, p.fpca, p.transforms);
  const auto scen = generate_paths(p.model, p.origin(), 3, 4, 8);
  const auto decoded = decode_scenarios(scen, decoder);
  const auto m = p.fpca.n_components();
  const auto& grid = decoder.grid();
  for (Eigen::Index s = 0; s < 4; ++s) {
    const Vector raw = decoder.raw_state(scen.state(s, 2));
    for (Eigen::Index e = 0; e < 2; ++e) {
      const auto& spec = p.transforms.per_equity[static_cast<std::size_t>(e)];
      std::vector<Quote> quotes;
      for (std::size_t i = 0; i < grid.taus.size(); ++i) {
        for (std::size_t j = 0; j < grid.deltas.size(); ++j) {
          const double iv = decoded.surface(s, 2, e)(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
          CHECK(iv > 0.0);
          quotes.push_back({delta_forward(grid.deltas[j]), tau_forward(grid.taus[i], p.transforms.tau_max), iv_forward(spec, iv)});
        }
      }
      CHECK((project_to_fpcc(p.fpca, quotes) - raw.segment(e * m, m)).cwiseAbs().maxCoeff() < 1e-8);
    }
  }
}

TEST_CASE("grid validation") {
  const fixture::Pipeline p;
  CHECK_THROWS_AS(SurfaceDecoder(p.model, p.fpca, p.transforms, MarketGrid{{0.5, 1.2}, {0.5}}), Error);
  CHECK_THROWS_AS(SurfaceDecoder(p.model, p.fpca, p.transforms, MarketGrid{{0.5}, {0.0}}), Error);
  CHECK_THROWS_AS(SurfaceDecoder(p.model, p.fpca, p.transforms, MarketGrid{{0.5}, {p.transforms.tau_max * 1.01}}), Error);
  const SurfaceDecoder ok(p.model, p.fpca, p.transforms, MarketGrid{{0.0, 1.0}, {p.transforms.tau_max}});
  CHECK(ok.surface(p.series.states.row(0).transpose(), 1).size() == 2);
}

TEST_CASE("stress decode stays strictly positive") {
  const fixture::Pipeline p;
  auto model = p.model;
  model.diff_net.params() *= 4.0;
  const SurfaceDecoder decoder(model, p.fpca, p.transforms);
  const auto decoded = decode_scenarios(generate_paths(model, p.origin(), 30, 100, 3, 2), decoder, 2);
  CHECK(decoded.iv.size() == 100u * 30u * 2u * 187u);
  CHECK(*std::min_element(decoded.iv.begin(), decoded.iv.end()) > 0.0);
}

TEST_CASE("text and binary round trips") {
  const fixture::Pipeline p;
  const SurfaceDecoder decoder(p.model, p.fpca, p.transforms, MarketGrid{{0.25, 0.5, 0.75}, {0.1, 1.0}});
  const auto scen = generate_paths(p.model, p.origin(), 2, 3, 4);
  const auto decoded = decode_scenarios(scen, decoder);

  std::stringstream csv;
  write_scenarios_csv(csv, decoded);
  std::string header;
  std::getline(std::stringstream(csv.str()), header);
  CHECK(header == "scenario,step,equity,kind,key1,key2,value");
  const auto from_csv = read_scenarios_csv(csv);
  CHECK(from_csv.equities == decoded.equities);
  CHECK(from_csv.price == decoded.price);
  CHECK(from_csv.iv == decoded.iv);

  std::stringstream bin;
  write_scenarios_binary(bin, decoded);
  const auto from_bin = read_scenarios_binary(bin);
  CHECK(from_bin.iv == decoded.iv);
  CHECK(from_bin.grid.taus == decoded.grid.taus);

  std::stringstream paths;
  write_paths_binary(paths, scen);
  const auto back = read_paths_binary(paths);
  CHECK(back.paths == scen.paths);
  CHECK(back.origin_window == scen.origin_window);
  CHECK(back.origin_time_index == scen.origin_time_index);

  std::string corrupt = bin.str();
  corrupt[0] = 'X';
  std::stringstream bad(corrupt);
  CHECK_THROWS_AS(read_scenarios_binary(bad), Error);
}
