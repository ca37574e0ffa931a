#pragma once

#include "ivgen/common.hpp"
#include "ivgen/fpca.hpp"
#include "ivgen/market_data.hpp"
#include "ivgen/nsde.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace ivgen {

/// Simulated state paths in normalized units, stored scenario-major:
/// value (s, k, j) sits at ((s * n_steps) + k) * state_dim + j.
struct ScenarioSet {
  std::uint64_t base_seed = 0;
  Eigen::Index n_steps = 0;
  Eigen::Index n_scenarios = 0;
  Eigen::Index state_dim = 0;
  Matrix origin_window;  // L x D, normalized
  /// Detrend time index of the last origin row; step k sits at origin + k + 1.
  std::int64_t origin_time_index = 0;
  std::vector<double> paths;

  using PathMap = Eigen::Map<const RowMatrix>;
  PathMap path(Eigen::Index s) const {
    return {paths.data() + s * n_steps * state_dim, n_steps, state_dim};
  }
  Vector state(Eigen::Index s, Eigen::Index k) const { return path(s).row(k).transpose(); }
};

/// Samples n_scenarios paths of n_steps from the conditional law, each
/// scenario on its own stream seeded by (base_seed, scenario). `raw_window`
/// holds at least L rows in state units; its last L rows condition every path.
ScenarioSet generate_paths(const NsdeModel& model, const Matrix& raw_window, Eigen::Index n_steps,
                           Eigen::Index n_scenarios, std::uint64_t base_seed, int threads = 1,
                           std::int64_t origin_time_index = 0);

/// Evaluation grid in market units: deltas in [0,1], maturities in years.
struct MarketGrid {
  std::vector<double> deltas;
  std::vector<double> taus;
};

/// Maps states back to market-space surfaces and prices.
class SurfaceDecoder {
 public:
  SurfaceDecoder(const NsdeModel& model, const FpcaModel& fpca, const TransformSpec& transforms,
                 MarketGrid grid = {});

  const MarketGrid& grid() const { return grid_; }
  Eigen::Index n_equities() const { return static_cast<Eigen::Index>(transforms_->equities.size()); }
  const std::vector<std::string>& equities() const { return transforms_->equities; }

  /// Normalized state -> state units (FPCCs and transformed prices).
  Vector raw_state(const Vector& normalized) const;

  /// Implied volatility of one equity at any (delta, tau) of the domain.
  double iv(const Vector& raw_state, Eigen::Index equity, double delta, double tau) const;
  /// Close price of one equity at a detrend time index.
  double price(const Vector& raw_state, Eigen::Index equity, double time_index) const;
  /// IVs on the decoder grid, n_tau x n_delta.
  Matrix surface(const Vector& raw_state, Eigen::Index equity) const;

 private:
  const NsdeModel* model_;
  const FpcaModel* fpca_;
  const TransformSpec* transforms_;
  MarketGrid grid_;
  Matrix grid_basis_;  // (n_tau * n_delta) x B, transformed coordinates
};

/// Decoded surfaces and prices, layout [scenario][step][equity][tau][delta].
struct DecodedScenarios {
  MarketGrid grid;
  std::vector<std::string> equities;
  Eigen::Index n_scenarios = 0;
  Eigen::Index n_steps = 0;
  std::vector<double> iv;
  std::vector<double> price;  // [scenario][step][equity]

  Eigen::Index n_delta() const { return static_cast<Eigen::Index>(grid.deltas.size()); }
  Eigen::Index n_tau() const { return static_cast<Eigen::Index>(grid.taus.size()); }
  Eigen::Index n_equities() const { return static_cast<Eigen::Index>(equities.size()); }

  Eigen::Map<const RowMatrix> surface(Eigen::Index s, Eigen::Index k, Eigen::Index e) const {
    const Eigen::Index block = n_tau() * n_delta();
    return {iv.data() + ((s * n_steps + k) * n_equities() + e) * block, n_tau(), n_delta()};
  }
  double spot(Eigen::Index s, Eigen::Index k, Eigen::Index e) const {
    return price[static_cast<std::size_t>((s * n_steps + k) * n_equities() + e)];
  }
};

DecodedScenarios decode_scenarios(const ScenarioSet& scen, const SurfaceDecoder& decoder, int threads = 1);

/// Long format: scenario,step,equity,kind,key1,key2,value (steps from 1).
void write_scenarios_csv(std::ostream& out, const DecodedScenarios& decoded);
DecodedScenarios read_scenarios_csv(std::istream& in);

/// Little-endian binary dump:
///   "IVSC" u32 version=1
///   u64 n_scenarios, n_steps, n_equities, n_delta, n_tau
///   f64[n_delta] deltas, f64[n_tau] taus
///   per equity: u32 length, bytes of the name
///   f64 iv block in [scenario][step][equity][tau][delta] order
///   f64 price block in [scenario][step][equity] order
void write_scenarios_binary(std::ostream& out, const DecodedScenarios& decoded);
DecodedScenarios read_scenarios_binary(std::istream& in);

/// Normalized paths, little-endian:
///   "IVPT" u32 version=1
///   u64 base_seed, n_steps, n_scenarios, state_dim, lag; i64 origin_time_index
///   f64 origin window (lag x D, row-major), f64 paths
void write_paths_binary(std::ostream& out, const ScenarioSet& scen);
ScenarioSet read_paths_binary(std::istream& in);

}  // namespace ivgen
