#pragma once

#include "ivgen/common.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace ivgen {

/// One row of the IV CSV file.
struct IvQuote {
  std::string date;
  std::string equity;
  double delta = 0.0;  // call delta in (0,1)
  double tau = 0.0;    // years to expiry
  double iv = 0.0;     // annualised implied volatility
};

/// A grid node of one day's surface for one equity.
struct Quote {
  double delta = 0.0;
  double tau = 0.0;
  double iv = 0.0;
};

struct PriceRow {
  std::string date;
  std::string equity;
  double close = 0.0;
};

enum class Coordinates { raw, transformed };

/// Aligned per-date, per-equity surfaces and spot prices. Cells are stored
/// date-major: cell(d, e) lives at index d * equities.size() + e.
struct PanelDataset {
  struct Cell {
    std::vector<Quote> quotes;  // sorted by (tau, delta)
    double price = 0.0;
  };

  std::vector<std::string> dates;
  std::vector<std::string> equities;
  std::vector<Cell> cells;
  Coordinates coords = Coordinates::raw;
  /// Observation index of dates[0] relative to the window the detrending was
  /// fitted on. Nonzero only for panels decoded beyond that window.
  std::int64_t first_time_index = 0;

  std::size_t n_dates() const { return dates.size(); }
  std::size_t n_equities() const { return equities.size(); }
  Cell& cell(std::size_t d, std::size_t e) { return cells[d * equities.size() + e]; }
  const Cell& cell(std::size_t d, std::size_t e) const { return cells[d * equities.size() + e]; }
};

std::vector<IvQuote> read_iv_csv(std::istream& in);
std::vector<PriceRow> read_price_csv(std::istream& in);

/// Aligns IV rows and prices on the strict intersection of dates at which
/// every equity has both quotes and a close.
PanelDataset build_panel(std::vector<IvQuote> quotes, const std::vector<PriceRow>& prices);

PanelDataset load_panel(const std::string& iv_path, const std::string& price_path);

void write_iv_csv(std::ostream& out, const PanelDataset& panel);
void write_price_csv(std::ostream& out, const PanelDataset& panel);

// ---------------------------------------------------------------------------
// Coordinate transforms

struct EquityTransform {
  double iv_c0 = 0.0;
  double iv_c1 = 1.0;
  double price_c0 = 0.0;
  double price_c1 = 1.0;
  double detrend_beta0 = 0.0;
  double detrend_beta1 = 0.0;
};

struct TransformSpec {
  static constexpr int version = 1;

  std::vector<std::string> equities;
  std::vector<EquityTransform> per_equity;
  double tau_max = 0.0;
  /// Number of observation indices the detrending was fitted on.
  std::int64_t fit_length = 0;

  std::size_t index_of(const std::string& equity) const;
};

inline double delta_forward(double delta) { return 2.0 * delta - 1.0; }
inline double delta_inverse(double x) { return 0.5 * (x + 1.0); }
double tau_forward(double tau, double tau_max);
double tau_inverse(double x, double tau_max);

/// log(e^sigma - 1), the inverse of softplus.
double log_expm1(double sigma);
/// log(1 + e^x), strictly positive for every real x.
double softplus(double x);

double iv_forward(const EquityTransform& t, double iv);
double iv_inverse(const EquityTransform& t, double x);
double price_forward(const EquityTransform& t, double price, double time_index);
double price_inverse(const EquityTransform& t, double x, double time_index);

TransformSpec fit_transforms(const PanelDataset& panel, double q_low = 0.1, double q_high = 0.9);

enum class Direction { forward, inverse };

/// Maps a panel between raw and transformed coordinates. Inverse maps of
/// dates outside the detrend window need `allow_extrapolation`.
PanelDataset apply_transforms(const PanelDataset& panel, const TransformSpec& spec,
                              Direction direction, bool allow_extrapolation = false);

nlohmann::json to_json(const TransformSpec& spec);
TransformSpec transform_spec_from_json(const nlohmann::json& j);

// ---------------------------------------------------------------------------
// Synthetic market with a known generating law

enum class SynthMode { flat, smile };

struct SynthConfig {
  SynthMode mode = SynthMode::smile;
  int n_equities = 2;
  int n_dates = 400;
  std::string start_date = "2019-01-02";
  std::vector<double> deltas;  // empty: 0.10, 0.15, ..., 0.90
  std::vector<double> taus;    // empty: 10, 30, 60, 91, 122, 152, 182, 273, 365, 547, 730 days
  double sigma0 = 0.2;         // flat mode volatility

  // smile mode law (annualised, daily step of 1/252); iv = softplus(log-level + smile terms)
  double level_mean = 0.28;
  double level_spacing = 0.06;  // added per equity index
  double level_reversion = 4.0;
  double level_volvol = 0.3;
  double skew_mean = 0.5;
  double skew_reversion = 3.0;
  double skew_vol = 0.4;
  double convexity_mean = 1.0;
  double convexity_reversion = 3.0;
  double convexity_vol = 0.7;
  double term_slope = 0.3;    // log-level shifts by slope * (sqrt(tau / 0.25) - 1); slope kept in [0, 0.6]
  double term_slope_reversion = 3.0;
  double term_slope_vol = 0.15;
  double smile_slope = -0.25; // skew and convexity scale as exp(smile_slope * (sqrt(tau / 0.25) - 1))
  double price_drift = 0.10;
  double leverage = -0.7;     // corr(level shock, own price shock)
  double price_common = 0.5;  // share of price variance from a common factor

  static std::vector<double> default_deltas();
  static std::vector<double> default_taus();
  void validate() const;
};

nlohmann::json to_json(const SynthConfig& config);
SynthConfig synth_config_from_json(const nlohmann::json& j);

PanelDataset synth_market(const SynthConfig& config, std::uint64_t seed);

}  // namespace ivgen
