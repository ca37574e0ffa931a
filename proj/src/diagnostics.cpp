#include "ivgen/diagnostics.hpp"

#include "ivgen/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ivgen {

KsResult ks_uniform(std::vector<double> sample) {
  if (sample.empty()) fail(ErrorKind::domain, "KS test of an empty sample");
  std::sort(sample.begin(), sample.end());
  const double n = static_cast<double>(sample.size());
  double d = 0.0;
  for (std::size_t k = 0; k < sample.size(); ++k) {
    const double f = std::clamp(sample[k], 0.0, 1.0);
    d = std::max({d, static_cast<double>(k + 1) / n - f, f - static_cast<double>(k) / n});
  }
  KsResult r;
  r.statistic = d;
  r.n = sample.size();
  r.reject_1pct = d > ks_critical_1pct / std::sqrt(n);
  r.reject_5pct = d > ks_critical_5pct / std::sqrt(n);
  return r;
}

Matrix pit_acf(const PitSeries& pits, int max_lag, std::vector<Eigen::Index>* constant_features) {
  const Eigen::Index t = pits.u.rows();
  if (max_lag < 1 || t <= max_lag) fail(ErrorKind::domain, "ACF needs more observations than lags");
  Matrix acf(pits.u.cols(), max_lag);
  for (Eigen::Index j = 0; j < pits.u.cols(); ++j) {
    const Vector x = pits.u.col(j).array() - pits.u.col(j).mean();
    const double denom = x.squaredNorm();
    if (!(denom > 0.0)) {
      acf.row(j).setConstant(std::numeric_limits<double>::quiet_NaN());
      if (constant_features) constant_features->push_back(j);
      continue;
    }
    for (int k = 1; k <= max_lag; ++k) acf(j, k - 1) = x.head(t - k).dot(x.tail(t - k)) / denom;
  }
  return acf;
}

std::vector<KsResult> univariate_pit_ks(const PitSeries& pits) {
  std::vector<KsResult> out;
  for (Eigen::Index j = 0; j < pits.u.cols(); ++j) {
    out.push_back(ks_uniform(std::vector<double>(pits.u.col(j).data(), pits.u.col(j).data() + pits.u.rows())));
  }
  return out;
}

std::vector<PairKs> pairwise_sum_pit_ks(const NsdeModel& model, const Matrix& raw_series) {
  const Eigen::Index d = model.state_dim();
  if (d < 2) fail(ErrorKind::domain, "pairwise PITs need at least two features");
  const SeriesObjective obj(model.normalize(raw_series), model.lag);
  const auto cond = obj.conditionals(model);
  const Matrix& y = obj.targets();
  std::vector<PairKs> out;
  std::vector<double> u(static_cast<std::size_t>(y.rows()));
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = i + 1; j < d; ++j) {
      for (Eigen::Index t = 0; t < y.rows(); ++t) {
        const Matrix& s = cond.sigma[static_cast<std::size_t>(t)];
        const double var = s(i, i) + s(j, j) + 2.0 * s(i, j);
        const double z = (y(t, i) + y(t, j) - cond.mu(t, i) - cond.mu(t, j)) / std::sqrt(var);
        u[static_cast<std::size_t>(t)] = std::clamp(normal_cdf(z), pit_clamp, 1.0 - pit_clamp);
      }
      out.push_back({i, j, ks_uniform(u)});
    }
  }
  return out;
}

namespace {

void window_correlations(const Eigen::Ref<const RowMatrix>& x, Eigen::Index i, Eigen::Index j, Eigen::Index window,
                         CorrelationSample& out) {
  for (Eigen::Index start = 0; start + window <= x.rows(); ++start) {
    const Vector a = x.col(i).segment(start, window);
    const Vector b = x.col(j).segment(start, window);
    const Vector ca = a.array() - a.mean();
    const Vector cb = b.array() - b.mean();
    const double den = std::sqrt(ca.squaredNorm() * cb.squaredNorm());
    if (!(den > 0.0)) {
      ++out.skipped;
      continue;
    }
    out.values.push_back(std::clamp(ca.dot(cb) / den, -1.0, 1.0));
  }
}

void check_pair(Eigen::Index d, Eigen::Index i, Eigen::Index j, Eigen::Index window, Eigen::Index length) {
  if (i < 0 || j < 0 || i >= d || j >= d) fail(ErrorKind::domain, "feature index out of range");
  if (window < 2 || length < window) fail(ErrorKind::domain, "series shorter than the correlation window");
}

}  // namespace

CorrelationSample rolling_correlations(const Matrix& series, Eigen::Index i, Eigen::Index j, Eigen::Index window) {
  check_pair(series.cols(), i, j, window, series.rows());
  CorrelationSample out;
  window_correlations(series, i, j, window, out);
  return out;
}

CorrelationSample rolling_correlations(const ScenarioSet& scen, Eigen::Index i, Eigen::Index j, Eigen::Index window) {
  check_pair(scen.state_dim, i, j, window, scen.n_steps);
  CorrelationSample out;
  for (Eigen::Index s = 0; s < scen.n_scenarios; ++s) window_correlations(scen.path(s), i, j, window, out);
  return out;
}

Histogram histogram(const std::vector<double>& values, double lo, double hi, int bins) {
  if (bins < 1 || !(hi > lo)) fail(ErrorKind::domain, "histogram needs a positive bin count and range");
  Histogram h;
  for (int b = 0; b <= bins; ++b) h.edges.push_back(lo + (hi - lo) * b / bins);
  h.counts.assign(static_cast<std::size_t>(bins), 0);
  for (double v : values) {
    if (!(v >= lo && v <= hi)) continue;
    const auto b = std::min(bins - 1, static_cast<int>((v - lo) / (hi - lo) * bins));
    ++h.counts[static_cast<std::size_t>(b)];
  }
  return h;
}

namespace {

nlohmann::json to_json(const KsResult& r) {
  return {{"statistic", r.statistic}, {"n", r.n}, {"reject_1pct", r.reject_1pct}, {"reject_5pct", r.reject_5pct}};
}

nlohmann::json to_json(const Histogram& h) { return {{"edges", h.edges}, {"counts", h.counts}}; }

}  // namespace

nlohmann::json diagnostics_report(const NsdeModel& model, const FpccSeries& series, const ScenarioSet* scen,
                                  const DiagnosticsOptions& options) {
  const Matrix& raw = series.states;
  const auto pits = pit_sequence(model, raw);
  nlohmann::json report;

  std::vector<Eigen::Index> constant;
  const Matrix acf = pit_acf(pits, options.max_lag, &constant);
  nlohmann::json acf_json = nlohmann::json::array();
  for (Eigen::Index j = 0; j < acf.rows(); ++j) {
    std::vector<double> row(static_cast<std::size_t>(acf.cols()));
    for (Eigen::Index k = 0; k < acf.cols(); ++k) row[static_cast<std::size_t>(k)] = acf(j, k);
    acf_json.push_back(row);
  }
  report["pit_acf"] = {{"max_lag", options.max_lag}, {"values", acf_json}, {"constant_features", constant}};

  nlohmann::json uni = nlohmann::json::array();
  int uni_rej1 = 0, uni_rej5 = 0;
  for (const auto& r : univariate_pit_ks(pits)) {
    uni.push_back(to_json(r));
    uni_rej1 += r.reject_1pct;
    uni_rej5 += r.reject_5pct;
  }
  report["univariate_ks"] = {{"tests", uni}, {"rejections_1pct", uni_rej1}, {"rejections_5pct", uni_rej5}};

  nlohmann::json pairs = nlohmann::json::array();
  int rej1 = 0, rej5 = 0;
  for (const auto& p : pairwise_sum_pit_ks(model, raw)) {
    auto j = to_json(p.ks);
    j["i"] = p.i;
    j["j"] = p.j;
    pairs.push_back(j);
    rej1 += p.ks.reject_1pct;
    rej5 += p.ks.reject_5pct;
  }
  report["pairwise_ks"] = {{"tests", pairs}, {"rejections_1pct", rej1}, {"rejections_5pct", rej5}};

  auto chosen = options.pairs;
  if (chosen.empty()) {
    for (std::size_t e = 0; e < series.equities.size(); ++e) {
      chosen.emplace_back(series.fpcc_column(e, 0), series.price_column(e));
    }
  }
  nlohmann::json corr = nlohmann::json::array();
  for (const auto& [i, j] : chosen) {
    for (const auto w : options.windows) {
      nlohmann::json entry{{"i", i}, {"j", j}, {"window", w}};
      if (raw.rows() >= w) {
        const auto obs = rolling_correlations(raw, i, j, w);
        entry["observed"] = to_json(histogram(obs.values, -1.0, 1.0, options.histogram_bins));
        entry["observed"]["skipped"] = obs.skipped;
      }
      if (scen && scen->n_steps >= w) {
        const auto gen = rolling_correlations(*scen, i, j, w);
        entry["generated"] = to_json(histogram(gen.values, -1.0, 1.0, options.histogram_bins));
        entry["generated"]["skipped"] = gen.skipped;
      }
      corr.push_back(entry);
    }
  }
  report["rolling_correlations"] = corr;
  return report;
}

}  // namespace ivgen
