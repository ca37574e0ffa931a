#pragma once

#include "ivgen/common.hpp"
#include "ivgen/generator.hpp"
#include "ivgen/market_data.hpp"

#include <array>
#include <iosfwd>
#include <string>
#include <vector>

namespace ivgen {

/// Zero-rate log-moneyness log(K/S) of a call with the given delta.
double delta_to_logmoneyness(double delta, double sigma, double tau);

/// One maturity of a surface in (log-moneyness, total variance) coordinates.
struct SurfaceSlice {
  double tau = 0.0;
  std::vector<double> m;  // strictly increasing
  std::vector<double> w;
};

/// Slices of an (n_tau x n_delta) IV surface, ordered by maturity.
std::vector<SurfaceSlice> build_slices(const Matrix& iv, const MarketGrid& grid);

/// (n_tau - 1) x n_delta calendar spreads on the shorter slice's nodes, with
/// the longer slice interpolated linearly in m and extended flat.
Matrix calendar_metrics(const std::vector<SurfaceSlice>& slices);

/// Durrleman's g at the interior nodes of a slice, from three-point
/// nonuniform central differences.
Vector butterfly_metrics(const SurfaceSlice& slice);

/// Both metric families of one surface.
struct DayArbitrage {
  std::vector<double> calendar;
  std::vector<double> butterfly;
  bool calendar_negative = false;
  bool butterfly_negative = false;
};

DayArbitrage day_arbitrage(const Matrix& iv, const MarketGrid& grid);

inline constexpr std::array<double, 9> metric_quantile_levels{0.001, 0.01, 0.05, 0.25, 0.5, 0.75, 0.95, 0.99, 0.999};
inline constexpr std::array<double, 7> count_quantile_levels{0.01, 0.05, 0.25, 0.5, 0.75, 0.95, 0.99};

struct EquityArbitrage {
  std::string equity;
  std::size_t n_days = 0;
  std::vector<double> butterfly_quantiles;  // at metric_quantile_levels
  std::vector<double> calendar_quantiles;
  double butterfly_negative_rate = 0.0;     // share of days with a negative node
  double calendar_negative_rate = 0.0;
  std::vector<int> butterfly_negative_days; // per window
  std::vector<int> calendar_negative_days;
  std::vector<double> butterfly_count_quantiles;  // at count_quantile_levels
  std::vector<double> calendar_count_quantiles;
};

struct ArbReport {
  std::vector<EquityArbitrage> equities;
};

/// Pools days[p][k] (path p, day k). Negative days are counted over every
/// window of `window` consecutive days of a path, or over the whole path when
/// it is shorter.
EquityArbitrage arbitrage_summary(const std::string& equity, const std::vector<std::vector<DayArbitrage>>& days,
                                  std::size_t window = 30);

/// Grid of a panel whose cells all quote the same (delta, tau) nodes.
MarketGrid panel_grid(const PanelDataset& panel);
/// IVs of one panel cell on the grid, n_tau x n_delta.
Matrix cell_surface(const PanelDataset::Cell& cell, const MarketGrid& grid);

ArbReport arbitrage_report(const PanelDataset& raw_panel, std::size_t window = 30, int threads = 1);
ArbReport arbitrage_report(const DecodedScenarios& scenarios, int threads = 1);

/// Long tables: table,level,equity,observed,simulated. Tables are
/// butterfly, calendar, butterfly_negative_days and calendar_negative_days.
void write_arb_tables_csv(std::ostream& out, const ArbReport& observed, const ArbReport& simulated);

}  // namespace ivgen
