#pragma once

#include "ivgen/common.hpp"
#include "ivgen/generator.hpp"

#include <array>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

namespace ivgen {

struct BsQuote {
  double price = 0.0;
  double delta = 0.0;
};

/// Zero-rate Black-Scholes call. At tau = 0 returns intrinsic value and the
/// indicator delta.
BsQuote bs_price_delta(double spot, double strike, double sigma, double tau);

/// sigma(delta, tau) of one day's surface.
using VolSurface = std::function<double(double delta, double tau)>;

struct ImplicitDelta {
  double delta = 0.0;
  double sigma = 0.0;
  bool bracketed = true;  // false when the fixed-point fallback was used
  int iterations = 0;
};

/// Solves delta = Phi(d1(sigma(delta, tau))) for a call struck at `strike`.
ImplicitDelta implicit_delta(const VolSurface& surface, double spot, double strike, double tau);

/// One short call, hedged `rebalances_per_day` times per calendar day.
struct HedgeContract {
  Eigen::Index equity = 0;
  double strike = 0.0;
  int expiry_steps = 30;
  int rebalances_per_day = 1;
};

/// Spots at every rebalancing time and at expiry (expiry_steps *
/// rebalances_per_day + 1 values), and the surface at each rebalancing time.
struct HedgePath {
  std::vector<double> spot;
  std::vector<VolSurface> surface;
};

struct HedgeLedger {
  double premium = 0.0;
  std::vector<double> position;
  std::vector<double> bank;
  double pnl = 0.0;
};

HedgeLedger run_hedge(const HedgePath& path, const HedgeContract& contract);

/// Hedge path of one equity along one scenario; day 0 is the origin's last
/// state. The strike is left to the caller.
HedgePath scenario_hedge_path(const ScenarioSet& scen, const SurfaceDecoder& decoder, Eigen::Index scenario,
                              Eigen::Index equity, int expiry_steps);

inline constexpr std::array<double, 4> pnl_quantile_levels{0.05, 0.25, 0.75, 0.95};

struct HedgeDistribution {
  std::string equity;
  double strike = 0.0;
  std::vector<double> pnl;        // one per scenario
  std::vector<double> quantiles;  // at pnl_quantile_levels
};

/// ATM short call per equity hedged along every scenario.
std::vector<HedgeDistribution> hedge_distribution(const ScenarioSet& scen, const SurfaceDecoder& decoder,
                                                  int expiry_steps = 30, int threads = 1);

void write_pnl_csv(std::ostream& out, const std::vector<HedgeDistribution>& dists);
void write_pnl_quantiles_csv(std::ostream& out, const std::vector<HedgeDistribution>& dists);

}  // namespace ivgen
