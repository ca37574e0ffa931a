#include "ivgen/hedging.hpp"

#include "ivgen/parallel.hpp"
#include "ivgen/stats.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>

namespace ivgen {

BsQuote bs_price_delta(double spot, double strike, double sigma, double tau) {
  if (!(spot > 0.0) || !(strike > 0.0)) fail(ErrorKind::domain, "spot and strike must be positive");
  if (tau == 0.0) return {std::max(spot - strike, 0.0), spot > strike ? 1.0 : 0.0};
  if (!(sigma > 0.0) || !(tau > 0.0)) fail(ErrorKind::domain, "volatility and maturity must be positive");
  const double s = sigma * std::sqrt(tau);
  const double d1 = (std::log(spot / strike) + 0.5 * s * s) / s;
  return {spot * normal_cdf(d1) - strike * normal_cdf(d1 - s), normal_cdf(d1)};
}

namespace {

constexpr double delta_lo = 0.01;
constexpr double delta_hi = 0.99;

}  // namespace

ImplicitDelta implicit_delta(const VolSurface& surface, double spot, double strike, double tau) {
  if (!(tau > 0.0)) fail(ErrorKind::domain, "implicit delta needs a positive maturity");
  auto model_delta = [&](double delta, double* sigma_out) {
    const double sigma = surface(delta, tau);
    if (!(sigma > 0.0) || !std::isfinite(sigma)) {
      fail(ErrorKind::numerical, "surface returned a non-positive volatility at delta " + std::to_string(delta));
    }
    if (sigma_out) *sigma_out = sigma;
    return bs_price_delta(spot, strike, sigma, tau).delta;
  };
  auto f = [&](double delta) { return delta - model_delta(delta, nullptr); };

  ImplicitDelta out;
  double a = delta_lo, b = delta_hi;
  double fa = f(a);
  const double fb = f(b);
  if (fa == 0.0 || fb == 0.0 || (fa < 0.0) != (fb < 0.0)) {
    if (fa == 0.0) b = a;
    if (fb == 0.0) a = b;
    for (out.iterations = 0; out.iterations < 200 && b - a > 1e-10; ++out.iterations) {
      const double mid = 0.5 * (a + b);
      const double fm = f(mid);
      if (fm == 0.0) {
        a = b = mid;
        break;
      }
      if ((fm < 0.0) == (fa < 0.0)) {
        a = mid;
        fa = fm;
      } else {
        b = mid;
      }
    }
    out.delta = 0.5 * (a + b);
    model_delta(out.delta, &out.sigma);
    return out;
  }

  out.bracketed = false;
  double delta = 0.5;
  for (out.iterations = 1; out.iterations <= 100; ++out.iterations) {
    const double next = 0.5 * delta + 0.5 * model_delta(delta, nullptr);
    if (std::abs(next - delta) < 1e-10) {
      delta = next;
      out.delta = delta;
      model_delta(delta, &out.sigma);
      return out;
    }
    delta = next;
  }
  std::ostringstream msg;
  msg << "implicit delta did not converge: no sign change on [" << delta_lo << ',' << delta_hi << "] (f = " << fa
      << ", " << fb << "), fixed point stopped at " << delta << " with residual " << f(delta);
  fail(ErrorKind::numerical, msg.str());
}

HedgeLedger run_hedge(const HedgePath& path, const HedgeContract& contract) {
  if (contract.expiry_steps < 1 || contract.rebalances_per_day < 1) {
    fail(ErrorKind::domain, "expiry and rebalancing frequency must be at least 1");
  }
  if (!(contract.strike > 0.0)) fail(ErrorKind::domain, "strike must be positive");
  const std::size_t n = static_cast<std::size_t>(contract.expiry_steps) * static_cast<std::size_t>(contract.rebalances_per_day);
  if (path.spot.size() < n + 1 || path.surface.size() < n) {
    fail(ErrorKind::shape, "hedge path covers " + std::to_string(path.surface.size()) + " rebalancing times, need " +
                               std::to_string(n));
  }
  const double per_day = contract.rebalances_per_day;
  auto tau_at = [&](std::size_t i) { return (contract.expiry_steps - static_cast<double>(i) / per_day) / 365.0; };

  HedgeLedger ledger;
  ledger.position.resize(n);
  ledger.bank.resize(n);
  const double k = contract.strike;
  const auto first = implicit_delta(path.surface[0], path.spot[0], k, tau_at(0));
  ledger.premium = bs_price_delta(path.spot[0], k, first.sigma, tau_at(0)).price;
  ledger.position[0] = first.delta;
  ledger.bank[0] = ledger.premium - first.delta * path.spot[0];
  for (std::size_t i = 1; i < n; ++i) {
    ledger.position[i] = implicit_delta(path.surface[i], path.spot[i], k, tau_at(i)).delta;
    ledger.bank[i] = ledger.bank[i - 1] - (ledger.position[i] - ledger.position[i - 1]) * path.spot[i];
  }
  const double s_t = path.spot[n];
  ledger.pnl = ledger.bank[n - 1] - std::max(s_t - k, 0.0) + ledger.position[n - 1] * s_t;
  return ledger;
}

HedgePath scenario_hedge_path(const ScenarioSet& scen, const SurfaceDecoder& decoder, Eigen::Index scenario,
                              Eigen::Index equity, int expiry_steps) {
  if (expiry_steps > scen.n_steps) {
    fail(ErrorKind::shape, "scenario has " + std::to_string(scen.n_steps) + " steps, contract needs " +
                               std::to_string(expiry_steps));
  }
  HedgePath path;
  for (int t = 0; t <= expiry_steps; ++t) {
    const Vector normalized = t == 0 ? Vector(scen.origin_window.row(scen.origin_window.rows() - 1).transpose())
                                     : scen.state(scenario, t - 1);
    Vector raw = decoder.raw_state(normalized);
    const double spot = decoder.price(raw, equity, static_cast<double>(scen.origin_time_index + t));
    if (!(spot > 0.0) || !std::isfinite(spot)) {
      fail(ErrorKind::numerical, "scenario " + std::to_string(scenario) + " decodes to spot " + std::to_string(spot) +
                                     " at step " + std::to_string(t));
    }
    path.spot.push_back(spot);
    if (t < expiry_steps) {
      path.surface.emplace_back([&decoder, raw = std::move(raw), equity](double delta, double tau) {
        return decoder.iv(raw, equity, delta, tau);
      });
    }
  }
  return path;
}

std::vector<HedgeDistribution> hedge_distribution(const ScenarioSet& scen, const SurfaceDecoder& decoder,
                                                  int expiry_steps, int threads) {
  if (scen.n_scenarios <= 0) fail(ErrorKind::domain, "no scenarios to hedge");
  std::vector<HedgeDistribution> out;
  for (Eigen::Index e = 0; e < decoder.n_equities(); ++e) {
    HedgeDistribution dist;
    dist.equity = decoder.equities()[static_cast<std::size_t>(e)];
    const Vector origin = decoder.raw_state(scen.origin_window.row(scen.origin_window.rows() - 1).transpose());
    dist.strike = decoder.price(origin, e, static_cast<double>(scen.origin_time_index));
    dist.pnl.resize(static_cast<std::size_t>(scen.n_scenarios));
    const HedgeContract contract{e, dist.strike, expiry_steps, 1};
    parallel_for(static_cast<std::size_t>(scen.n_scenarios), threads, [&](std::size_t s) {
      const auto path = scenario_hedge_path(scen, decoder, static_cast<Eigen::Index>(s), e, expiry_steps);
      dist.pnl[s] = run_hedge(path, contract).pnl;
    });
    dist.quantiles = quantiles(dist.pnl, pnl_quantile_levels);
    out.push_back(std::move(dist));
  }
  return out;
}

void write_pnl_csv(std::ostream& out, const std::vector<HedgeDistribution>& dists) {
  out << "equity,scenario,pnl\n" << std::setprecision(17);
  for (const auto& d : dists) {
    for (std::size_t s = 0; s < d.pnl.size(); ++s) out << d.equity << ',' << s << ',' << d.pnl[s] << '\n';
  }
}

void write_pnl_quantiles_csv(std::ostream& out, const std::vector<HedgeDistribution>& dists) {
  out << "equity,strike,level,pnl\n" << std::setprecision(17);
  for (const auto& d : dists) {
    for (std::size_t i = 0; i < pnl_quantile_levels.size(); ++i) {
      out << d.equity << ',' << d.strike << ',' << pnl_quantile_levels[i] << ',' << d.quantiles[i] << '\n';
    }
  }
}

}  // namespace ivgen
