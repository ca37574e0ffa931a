#include "ivgen/arbitrage.hpp"

#include "ivgen/parallel.hpp"
#include "ivgen/stats.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <ostream>

namespace ivgen {

double delta_to_logmoneyness(double delta, double sigma, double tau) {
  if (!(delta > 0.0 && delta < 1.0)) fail(ErrorKind::domain, "delta must lie strictly inside (0,1)");
  if (!(sigma > 0.0) || !(tau > 0.0)) fail(ErrorKind::domain, "volatility and maturity must be positive");
  const double s = sigma * std::sqrt(tau);
  return -normal_quantile(delta) * s + 0.5 * s * s;
}

std::vector<SurfaceSlice> build_slices(const Matrix& iv, const MarketGrid& grid) {
  const auto n_tau = static_cast<Eigen::Index>(grid.taus.size());
  const auto n_delta = static_cast<Eigen::Index>(grid.deltas.size());
  if (iv.rows() != n_tau || iv.cols() != n_delta) fail(ErrorKind::shape, "surface does not match the grid");
  if (n_delta < 3) fail(ErrorKind::domain, "slices need at least three deltas");
  std::vector<SurfaceSlice> slices;
  slices.reserve(grid.taus.size());
  std::vector<std::size_t> order(grid.taus.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return grid.taus[a] < grid.taus[b]; });
  for (auto i : order) {
    const double tau = grid.taus[i];
    std::vector<std::pair<double, double>> nodes;
    nodes.reserve(grid.deltas.size());
    for (Eigen::Index j = 0; j < n_delta; ++j) {
      const double sigma = iv(static_cast<Eigen::Index>(i), j);
      nodes.emplace_back(delta_to_logmoneyness(grid.deltas[static_cast<std::size_t>(j)], sigma, tau), sigma * sigma * tau);
    }
    std::sort(nodes.begin(), nodes.end());
    SurfaceSlice slice;
    slice.tau = tau;
    for (const auto& [m, w] : nodes) {
      if (!slice.m.empty() && m - slice.m.back() <= 1e-10) {
        fail(ErrorKind::domain, "log-moneyness collision in slice tau=" + std::to_string(tau));
      }
      slice.m.push_back(m);
      slice.w.push_back(w);
    }
    slices.push_back(std::move(slice));
  }
  return slices;
}

namespace {

double interpolate_flat(const SurfaceSlice& s, double m) {
  if (m <= s.m.front()) return s.w.front();
  if (m >= s.m.back()) return s.w.back();
  const auto hi = static_cast<std::size_t>(std::upper_bound(s.m.begin(), s.m.end(), m) - s.m.begin());
  const std::size_t lo = hi - 1;
  const double f = (m - s.m[lo]) / (s.m[hi] - s.m[lo]);
  return s.w[lo] + f * (s.w[hi] - s.w[lo]);
}

}  // namespace

Matrix calendar_metrics(const std::vector<SurfaceSlice>& slices) {
  if (slices.size() < 2) fail(ErrorKind::domain, "calendar spreads need at least two maturities");
  const auto n = static_cast<Eigen::Index>(slices.front().m.size());
  Matrix cs(static_cast<Eigen::Index>(slices.size()) - 1, n);
  for (std::size_t i = 1; i < slices.size(); ++i) {
    const auto& shorter = slices[i - 1];
    const auto& longer = slices[i];
    if (static_cast<Eigen::Index>(shorter.m.size()) != n) fail(ErrorKind::shape, "slices have different node counts");
    const double dtau = longer.tau - shorter.tau;
    if (!(dtau > 0.0)) fail(ErrorKind::domain, "slices must have strictly increasing maturities");
    for (Eigen::Index j = 0; j < n; ++j) {
      const auto jj = static_cast<std::size_t>(j);
      cs(static_cast<Eigen::Index>(i) - 1, j) = (interpolate_flat(longer, shorter.m[jj]) - shorter.w[jj]) / dtau;
    }
  }
  return cs;
}

Vector butterfly_metrics(const SurfaceSlice& slice) {
  const std::size_t n = slice.m.size();
  if (n < 3) fail(ErrorKind::domain, "butterfly metric needs at least three nodes");
  Vector g(static_cast<Eigen::Index>(n - 2));
  for (std::size_t j = 1; j + 1 < n; ++j) {
    const double w0 = slice.w[j - 1], w1 = slice.w[j], w2 = slice.w[j + 1];
    if (w1 == 0.0) {
      fail(ErrorKind::domain, "zero total variance at node " + std::to_string(j) + " of slice tau=" +
                                  std::to_string(slice.tau));
    }
    const double h1 = slice.m[j] - slice.m[j - 1];
    const double h2 = slice.m[j + 1] - slice.m[j];
    const double d1 = -h2 / (h1 * (h1 + h2)) * w0 + (h2 - h1) / (h1 * h2) * w1 + h1 / (h2 * (h1 + h2)) * w2;
    const double d2 = 2.0 * (w0 / (h1 * (h1 + h2)) - w1 / (h1 * h2) + w2 / (h2 * (h1 + h2)));
    const double m = slice.m[j];
    const double a = 1.0 - m * d1 / (2.0 * w1);
    g(static_cast<Eigen::Index>(j) - 1) = a * a - 0.25 * d1 * d1 * (1.0 / w1 + 0.25) + 0.5 * d2;
  }
  return g;
}

DayArbitrage day_arbitrage(const Matrix& iv, const MarketGrid& grid) {
  const auto slices = build_slices(iv, grid);
  DayArbitrage day;
  if (slices.size() >= 2) {
    const Matrix cs = calendar_metrics(slices);
    day.calendar.assign(cs.data(), cs.data() + cs.size());
  }
  for (const auto& s : slices) {
    const Vector g = butterfly_metrics(s);
    day.butterfly.insert(day.butterfly.end(), g.data(), g.data() + g.size());
  }
  const auto negative = [](double v) { return v < 0.0; };
  day.calendar_negative = std::any_of(day.calendar.begin(), day.calendar.end(), negative);
  day.butterfly_negative = std::any_of(day.butterfly.begin(), day.butterfly.end(), negative);
  return day;
}

namespace {

std::vector<double> level_quantiles(std::vector<double> pooled, std::span<const double> levels) {
  if (pooled.empty()) return std::vector<double>(levels.size(), std::numeric_limits<double>::quiet_NaN());
  return quantiles(std::move(pooled), levels);
}

}  // namespace

EquityArbitrage arbitrage_summary(const std::string& equity, const std::vector<std::vector<DayArbitrage>>& days,
                                  std::size_t window) {
  if (window == 0) fail(ErrorKind::domain, "window must be positive");
  EquityArbitrage out;
  out.equity = equity;
  std::vector<double> bf, cal;
  std::size_t bf_neg = 0, cal_neg = 0;
  for (const auto& path : days) {
    for (const auto& d : path) {
      bf.insert(bf.end(), d.butterfly.begin(), d.butterfly.end());
      cal.insert(cal.end(), d.calendar.begin(), d.calendar.end());
      bf_neg += d.butterfly_negative;
      cal_neg += d.calendar_negative;
      ++out.n_days;
    }
    if (path.empty()) continue;
    const std::size_t span = std::min(window, path.size());
    for (std::size_t start = 0; start + span <= path.size(); ++start) {
      int b = 0, c = 0;
      for (std::size_t k = start; k < start + span; ++k) {
        b += path[k].butterfly_negative;
        c += path[k].calendar_negative;
      }
      out.butterfly_negative_days.push_back(b);
      out.calendar_negative_days.push_back(c);
    }
  }
  out.butterfly_quantiles = level_quantiles(std::move(bf), metric_quantile_levels);
  out.calendar_quantiles = level_quantiles(std::move(cal), metric_quantile_levels);
  if (out.n_days > 0) {
    out.butterfly_negative_rate = static_cast<double>(bf_neg) / static_cast<double>(out.n_days);
    out.calendar_negative_rate = static_cast<double>(cal_neg) / static_cast<double>(out.n_days);
  }
  auto counts = [](const std::vector<int>& v) {
    return level_quantiles(std::vector<double>(v.begin(), v.end()), count_quantile_levels);
  };
  out.butterfly_count_quantiles = counts(out.butterfly_negative_days);
  out.calendar_count_quantiles = counts(out.calendar_negative_days);
  return out;
}

MarketGrid panel_grid(const PanelDataset& panel) {
  if (panel.cells.empty()) fail(ErrorKind::domain, "empty panel");
  MarketGrid grid;
  for (const auto& q : panel.cells.front().quotes) {
    grid.deltas.push_back(q.delta);
    grid.taus.push_back(q.tau);
  }
  for (auto* v : {&grid.deltas, &grid.taus}) {
    std::sort(v->begin(), v->end());
    v->erase(std::unique(v->begin(), v->end()), v->end());
  }
  return grid;
}

Matrix cell_surface(const PanelDataset::Cell& cell, const MarketGrid& grid) {
  const auto n_tau = static_cast<Eigen::Index>(grid.taus.size());
  const auto n_delta = static_cast<Eigen::Index>(grid.deltas.size());
  if (static_cast<Eigen::Index>(cell.quotes.size()) != n_tau * n_delta) {
    fail(ErrorKind::shape, "cell does not quote the full grid");
  }
  Matrix iv(n_tau, n_delta);
  for (const auto& q : cell.quotes) {
    const auto i = std::lower_bound(grid.taus.begin(), grid.taus.end(), q.tau) - grid.taus.begin();
    const auto j = std::lower_bound(grid.deltas.begin(), grid.deltas.end(), q.delta) - grid.deltas.begin();
    if (i == n_tau || j == n_delta || grid.taus[static_cast<std::size_t>(i)] != q.tau ||
        grid.deltas[static_cast<std::size_t>(j)] != q.delta) {
      fail(ErrorKind::shape, "cell quotes a node outside the panel grid");
    }
    iv(i, j) = q.iv;
  }
  return iv;
}

ArbReport arbitrage_report(const PanelDataset& panel, std::size_t window, int threads) {
  if (panel.coords != Coordinates::raw) fail(ErrorKind::domain, "arbitrage metrics need a raw panel");
  const MarketGrid grid = panel_grid(panel);
  const std::size_t n_eq = panel.n_equities();
  std::vector<std::vector<DayArbitrage>> days(n_eq, std::vector<DayArbitrage>(panel.n_dates()));
  parallel_for(panel.n_dates(), threads, [&](std::size_t d) {
    for (std::size_t e = 0; e < n_eq; ++e) days[e][d] = day_arbitrage(cell_surface(panel.cell(d, e), grid), grid);
  });
  ArbReport report;
  for (std::size_t e = 0; e < n_eq; ++e) {
    report.equities.push_back(arbitrage_summary(panel.equities[e], {std::move(days[e])}, window));
  }
  return report;
}

ArbReport arbitrage_report(const DecodedScenarios& dec, int threads) {
  const auto n_eq = static_cast<std::size_t>(dec.n_equities());
  const auto n_s = static_cast<std::size_t>(dec.n_scenarios);
  std::vector<std::vector<std::vector<DayArbitrage>>> days(
      n_eq, std::vector<std::vector<DayArbitrage>>(n_s, std::vector<DayArbitrage>(static_cast<std::size_t>(dec.n_steps))));
  parallel_for(n_s, threads, [&](std::size_t s) {
    for (Eigen::Index k = 0; k < dec.n_steps; ++k) {
      for (std::size_t e = 0; e < n_eq; ++e) {
        const Matrix iv = dec.surface(static_cast<Eigen::Index>(s), k, static_cast<Eigen::Index>(e));
        days[e][s][static_cast<std::size_t>(k)] = day_arbitrage(iv, dec.grid);
      }
    }
  });
  ArbReport report;
  for (std::size_t e = 0; e < n_eq; ++e) {
    report.equities.push_back(
        arbitrage_summary(dec.equities[e], days[e], static_cast<std::size_t>(std::max<Eigen::Index>(dec.n_steps, 1))));
  }
  return report;
}

void write_arb_tables_csv(std::ostream& out, const ArbReport& observed, const ArbReport& simulated) {
  out << "table,level,equity,observed,simulated\n" << std::setprecision(10);
  auto find = [](const ArbReport& r, const std::string& name) -> const EquityArbitrage* {
    for (const auto& e : r.equities) {
      if (e.equity == name) return &e;
    }
    return nullptr;
  };
  auto emit = [&](const char* table, std::span<const double> levels, auto member) {
    for (std::size_t i = 0; i < levels.size(); ++i) {
      for (const auto& obs : observed.equities) {
        const auto* sim = find(simulated, obs.equity);
        out << table << ',' << levels[i] << ',' << obs.equity << ',' << (obs.*member)[i] << ',';
        if (sim) out << (sim->*member)[i];
        out << '\n';
      }
    }
  };
  emit("butterfly", metric_quantile_levels, &EquityArbitrage::butterfly_quantiles);
  emit("calendar", metric_quantile_levels, &EquityArbitrage::calendar_quantiles);
  emit("butterfly_negative_days", count_quantile_levels, &EquityArbitrage::butterfly_count_quantiles);
  emit("calendar_negative_days", count_quantile_levels, &EquityArbitrage::calendar_count_quantiles);
  for (const auto& obs : observed.equities) {
    const auto* sim = find(simulated, obs.equity);
    out << "butterfly_negative_rate,," << obs.equity << ',' << obs.butterfly_negative_rate << ',';
    if (sim) out << sim->butterfly_negative_rate;
    out << "\ncalendar_negative_rate,," << obs.equity << ',' << obs.calendar_negative_rate << ',';
    if (sim) out << sim->calendar_negative_rate;
    out << '\n';
  }
}

}  // namespace ivgen
