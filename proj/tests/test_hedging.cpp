#include <doctest.h>

#include "fixtures.hpp"
#include "ivgen/hedging.hpp"

#include <sstream>

using namespace ivgen;

namespace {

VolSurface flat(double sigma) {
  return [sigma](double, double) { return sigma; };
}

// Geometric Brownian paths sampled at every rebalancing time, zero drift.
std::vector<double> gbm_path(Rng& rng, double s0, double sigma, int days, int per_day) {
  std::normal_distribution<double> z(0.0, 1.0);
  const double dt = 1.0 / (365.0 * per_day);
  std::vector<double> s{s0};
  for (int i = 0; i < days * per_day; ++i) {
    s.push_back(s.back() * std::exp(-0.5 * sigma * sigma * dt + sigma * std::sqrt(dt) * z(rng)));
  }
  return s;
}

struct Moments {
  double mean, sd;
};

Moments bs_world(int per_day, int n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> pnl;
  HedgeContract c{0, 100.0, 30, per_day};
  for (int p = 0; p < n; ++p) {
    HedgePath path{gbm_path(rng, 100.0, 0.25, 30, per_day), std::vector<VolSurface>(30 * per_day, flat(0.25))};
    pnl.push_back(run_hedge(path, c).pnl);
  }
  double mean = 0, sq = 0;
  for (double x : pnl) mean += x;
  mean /= n;
  for (double x : pnl) sq += (x - mean) * (x - mean);
  return {mean, std::sqrt(sq / (n - 1))};
}

}  // namespace

TEST_CASE("black-scholes price and delta") {
  const auto atm = bs_price_delta(3325.97, 3325.97, 0.37, 30.0 / 365.0);
  CHECK(atm.price == doctest::Approx(140.97).epsilon(0.01));
  CHECK(atm.delta == doctest::Approx(0.52).epsilon(0.02));
  CHECK(std::abs(atm.delta - 0.52) < 0.01);
  const auto itm = bs_price_delta(1000.0, 100.0, 0.2, 0.1);
  CHECK(std::abs(itm.price - 900.0) < 1e-6);
  CHECK(std::abs(itm.delta - 1.0) < 1e-6);
  double prev = 0.0;
  for (int i = 1; i <= 50; ++i) {
    const double p = bs_price_delta(100.0, 105.0, 0.02 * i, 0.5).price;
    CHECK(p > prev);
    prev = p;
  }
  CHECK(bs_price_delta(110.0, 100.0, 0.3, 0.0).price == 10.0);
  CHECK(bs_price_delta(110.0, 100.0, 0.3, 0.0).delta == 1.0);
  CHECK(bs_price_delta(90.0, 100.0, 0.3, 0.0).delta == 0.0);
  CHECK_THROWS_AS(bs_price_delta(-1.0, 100.0, 0.3, 0.5), Error);
}

TEST_CASE("implicit delta on flat surfaces is the closed-form delta") {
  const auto atm = implicit_delta(flat(0.37), 100.0, 100.0, 30.0 / 365.0);
  CHECK(atm.delta == doctest::Approx(normal_cdf(0.37 * std::sqrt(30.0 / 365.0) / 2)).epsilon(1e-9));
  CHECK(std::abs(atm.delta - 0.521) < 1e-3);
  CHECK(atm.bracketed);

  Rng rng(2);
  std::uniform_real_distribution<double> moneyness(0.85, 1.15), vol(0.1, 0.6), tau(5.0 / 365, 0.5);
  int checked = 0;
  for (int i = 0; i < 1000; ++i) {
    const double k = 100.0 / moneyness(rng), s = vol(rng), t = tau(rng);
    const double want = bs_price_delta(100.0, k, s, t).delta;
    if (want < 0.01 || want > 0.99) continue;  // outside the bracket
    CHECK(std::abs(implicit_delta(flat(s), 100.0, k, t).delta - want) < 1e-9);
    ++checked;
  }
  CHECK(checked > 800);
}

TEST_CASE("implicit delta on a skewed surface matches a grid scan") {
  const VolSurface skew = [](double d, double) { return 0.3 + 0.15 * (0.5 - d) + 0.1 * (d - 0.5) * (d - 0.5); };
  const double s = 100.0, k = 103.0, tau = 20.0 / 365.0;
  const auto got = implicit_delta(skew, s, k, tau);
  double best = 0.0, best_f = 1e9;
  for (int i = 0; i < 1000000; ++i) {
    const double d = 0.01 + 0.98 * i / 999999.0;
    const double sig = skew(d, tau);
    const double f = std::abs(d - normal_cdf((std::log(s / k) + 0.5 * sig * sig * tau) / (sig * std::sqrt(tau))));
    if (f < best_f) {
      best_f = f;
      best = d;
    }
  }
  CHECK(std::abs(got.delta - best) < 1e-5);
  CHECK(got.sigma == doctest::Approx(skew(got.delta, tau)));
}

TEST_CASE("ledger identity and the constant-price path") {
  const VolSurface smile = [](double d, double t) { return 0.25 + 0.1 * (d - 0.5) * (d - 0.5) + 0.2 * t; };
  HedgePath path{std::vector<double>(31, 50.0), std::vector<VolSurface>(30, smile)};
  const HedgeContract c{0, 50.0, 30, 1};
  const auto ledger = run_hedge(path, c);

  // Hand-rolled ledger.
  const auto d0 = implicit_delta(smile, 50.0, 50.0, 30.0 / 365.0);
  const double premium = bs_price_delta(50.0, 50.0, d0.sigma, 30.0 / 365.0).price;
  double bank = premium - d0.delta * 50.0, pos = d0.delta;
  for (int t = 1; t < 30; ++t) {
    const double next = implicit_delta(smile, 50.0, 50.0, (30.0 - t) / 365.0).delta;
    bank -= (next - pos) * 50.0;
    pos = next;
    CHECK(ledger.bank[static_cast<std::size_t>(t)] == bank);
    CHECK(ledger.bank[static_cast<std::size_t>(t)] ==
          ledger.bank[static_cast<std::size_t>(t - 1)] -
              (ledger.position[static_cast<std::size_t>(t)] - ledger.position[static_cast<std::size_t>(t - 1)]) * 50.0);
  }
  const double pnl = bank + pos * 50.0;
  CHECK(ledger.premium == premium);
  CHECK(ledger.pnl == doctest::Approx(pnl).epsilon(1e-14));
  CHECK(ledger.pnl == doctest::Approx(premium).epsilon(1e-12));

  path.spot.resize(30);
  CHECK_THROWS_AS(run_hedge(path, c), Error);
}

TEST_CASE("black-scholes world hedging error shrinks with rebalancing frequency") {
  const auto daily = bs_world(1, 10000, 7);
  CHECK(std::abs(daily.mean) < 3.0 * daily.sd / std::sqrt(10000.0));
  const auto twice = bs_world(2, 3000, 8);
  const auto four = bs_world(4, 3000, 9);
  CHECK(twice.sd < daily.sd);
  CHECK(four.sd < twice.sd);
}

TEST_CASE("scenario hedging distribution") {
  const fixture::Pipeline p;
  const SurfaceDecoder decoder(p.model, p.fpca, p.transforms);
  auto scen = generate_paths(p.model, p.origin(), 5, 1, 3, 1, p.last_index());
  CHECK_THROWS_AS(hedge_distribution(scen, decoder, 6), Error);
  // Replicate one scenario: the distribution collapses to a point.
  const auto one = scen.paths;
  for (int i = 0; i < 3; ++i) scen.paths.insert(scen.paths.end(), one.begin(), one.end());
  scen.n_scenarios = 4;
  const auto dist = hedge_distribution(scen, decoder, 5, 2);
  REQUIRE(dist.size() == 2u);
  for (const auto& d : dist) {
    CHECK(d.pnl.size() == 4u);
    CHECK(d.quantiles.front() == d.quantiles.back());
    CHECK(d.strike == doctest::Approx(p.raw.cell(static_cast<std::size_t>(p.last_index()), d.equity == "EQ00" ? 0 : 1).price));
  }
  std::stringstream pnl, q;
  write_pnl_csv(pnl, dist);
  write_pnl_quantiles_csv(q, dist);
  std::string header;
  std::getline(pnl, header);
  CHECK(header == "equity,scenario,pnl");
}
