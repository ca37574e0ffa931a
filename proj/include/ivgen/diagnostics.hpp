#pragma once

#include "ivgen/common.hpp"
#include "ivgen/generator.hpp"
#include "ivgen/nsde.hpp"
#include "ivgen/training.hpp"

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace ivgen {

/// One-sample Kolmogorov-Smirnov test against Uniform(0,1) with asymptotic
/// critical values.
struct KsResult {
  double statistic = 0.0;
  std::size_t n = 0;
  bool reject_1pct = false;
  bool reject_5pct = false;
};

inline constexpr double ks_critical_1pct = 1.628;
inline constexpr double ks_critical_5pct = 1.358;

KsResult ks_uniform(std::vector<double> sample);

/// Sample autocorrelations of each PIT column at lags 1..max_lag, as a
/// D x max_lag matrix. Constant columns get NaN rows and are listed in
/// `constant_features` when given.
Matrix pit_acf(const PitSeries& pits, int max_lag, std::vector<Eigen::Index>* constant_features = nullptr);

std::vector<KsResult> univariate_pit_ks(const PitSeries& pits);

struct PairKs {
  Eigen::Index i = 0;
  Eigen::Index j = 0;
  KsResult ks;
};

/// KS tests of the one-step PITs of b_i + b_j for every unordered pair i < j,
/// in normalized units.
std::vector<PairKs> pairwise_sum_pit_ks(const NsdeModel& model, const Matrix& raw_series);

struct CorrelationSample {
  std::vector<double> values;
  std::size_t skipped = 0;  // windows with zero variance
};

/// Pearson correlation of columns i and j over every window of `window`
/// consecutive rows.
CorrelationSample rolling_correlations(const Matrix& series, Eigen::Index i, Eigen::Index j, Eigen::Index window);
/// Same over each generated path, pooled across scenarios.
CorrelationSample rolling_correlations(const ScenarioSet& scen, Eigen::Index i, Eigen::Index j, Eigen::Index window);

struct Histogram {
  std::vector<double> edges;
  std::vector<std::size_t> counts;
};

Histogram histogram(const std::vector<double>& values, double lo, double hi, int bins);

struct DiagnosticsOptions {
  int max_lag = 20;
  std::vector<Eigen::Index> windows{10, 30};
  /// Feature pairs for the correlation densities; empty means each equity's
  /// first component against its own price.
  std::vector<std::pair<Eigen::Index, Eigen::Index>> pairs;
  int histogram_bins = 20;
};

/// JSON report: PIT ACFs, univariate and pairwise KS tables, and rolling
/// correlation histograms for the observed series and, when given, the
/// generated scenarios.
nlohmann::json diagnostics_report(const NsdeModel& model, const FpccSeries& series, const ScenarioSet* scen,
                                  const DiagnosticsOptions& options = {});

}  // namespace ivgen
