#include "ivgen/market_data.hpp"

#include "ivgen/stats.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <tuple>

namespace ivgen {
namespace {

std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return fields;
}

std::string_view trim_cr(std::string_view s) {
  if (!s.empty() && s.back() == '\r') s.remove_suffix(1);
  return s;
}

[[noreturn]] void parse_error(std::size_t line, const std::string& what) {
  fail(ErrorKind::parse, "line " + std::to_string(line) + ": " + what);
}

[[noreturn]] void domain_error(std::size_t line, const std::string& what) {
  fail(ErrorKind::domain, "line " + std::to_string(line) + ": " + what);
}

double parse_double(std::string_view field, std::size_t line, const char* name) {
  double value = 0.0;
  const auto* first = field.data();
  const auto* last = field.data() + field.size();
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last || field.empty()) {
    parse_error(line, std::string("cannot parse ") + name + " '" + std::string(field) + "'");
  }
  if (!std::isfinite(value)) parse_error(line, std::string(name) + " is not finite");
  return value;
}

bool valid_iso_date(std::string_view s) {
  if (s.size() != 10 || s[4] != '-' || s[7] != '-') return false;
  int y = 0;
  unsigned m = 0;
  unsigned d = 0;
  auto num = [&](std::size_t pos, std::size_t len, auto& out) {
    const auto [p, ec] = std::from_chars(s.data() + pos, s.data() + pos + len, out);
    return ec == std::errc() && p == s.data() + pos + len;
  };
  if (!num(0, 4, y) || !num(5, 2, m) || !num(8, 2, d)) return false;
  return std::chrono::year_month_day(std::chrono::year(y), std::chrono::month(m),
                                     std::chrono::day(d))
      .ok();
}

void expect_header(std::istream& in, std::string_view expected) {
  std::string line;
  if (!std::getline(in, line)) fail(ErrorKind::parse, "line 1: missing header");
  if (trim_cr(line) != expected) {
    parse_error(1, "expected header '" + std::string(expected) + "'");
  }
}

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

std::vector<IvQuote> read_iv_csv(std::istream& in) {
  expect_header(in, "date,equity,delta,tau,iv");
  std::vector<IvQuote> rows;
  std::string line;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const auto view = trim_cr(line);
    if (view.empty()) continue;
    const auto f = split_csv(view);
    if (f.size() != 5) parse_error(line_no, "expected 5 fields, got " + std::to_string(f.size()));
    if (!valid_iso_date(f[0])) parse_error(line_no, "invalid date '" + std::string(f[0]) + "'");
    if (f[1].empty()) parse_error(line_no, "empty equity");
    IvQuote q{std::string(f[0]), std::string(f[1]), parse_double(f[2], line_no, "delta"),
              parse_double(f[3], line_no, "tau"), parse_double(f[4], line_no, "iv")};
    if (!(q.delta > 0.0 && q.delta < 1.0)) domain_error(line_no, "delta outside (0,1)");
    if (!(q.tau > 0.0)) domain_error(line_no, "tau must be positive");
    if (!(q.iv > 0.0)) domain_error(line_no, "iv must be positive");
    rows.push_back(std::move(q));
  }
  return rows;
}

std::vector<PriceRow> read_price_csv(std::istream& in) {
  expect_header(in, "date,equity,close");
  std::vector<PriceRow> rows;
  std::string line;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const auto view = trim_cr(line);
    if (view.empty()) continue;
    const auto f = split_csv(view);
    if (f.size() != 3) parse_error(line_no, "expected 3 fields, got " + std::to_string(f.size()));
    if (!valid_iso_date(f[0])) parse_error(line_no, "invalid date '" + std::string(f[0]) + "'");
    if (f[1].empty()) parse_error(line_no, "empty equity");
    PriceRow p{std::string(f[0]), std::string(f[1]), parse_double(f[2], line_no, "close")};
    if (!(p.close > 0.0)) domain_error(line_no, "close must be positive");
    rows.push_back(std::move(p));
  }
  return rows;
}

PanelDataset build_panel(std::vector<IvQuote> quotes, const std::vector<PriceRow>& prices) {
  std::sort(quotes.begin(), quotes.end(), [](const IvQuote& a, const IvQuote& b) {
    return std::tie(a.date, a.equity, a.tau, a.delta) < std::tie(b.date, b.equity, b.tau, b.delta);
  });
  for (std::size_t i = 1; i < quotes.size(); ++i) {
    const auto& a = quotes[i - 1];
    const auto& b = quotes[i];
    if (a.date == b.date && a.equity == b.equity && a.tau == b.tau && a.delta == b.delta) {
      fail(ErrorKind::parse, "duplicate quote for " + b.date + " " + b.equity + " delta=" +
                                 format_double(b.delta) + " tau=" + format_double(b.tau));
    }
  }

  std::map<std::pair<std::string, std::string>, double> close;
  for (const auto& p : prices) {
    if (!close.emplace(std::make_pair(p.date, p.equity), p.close).second) {
      fail(ErrorKind::parse, "duplicate close for " + p.date + " " + p.equity);
    }
  }

  std::set<std::string> equity_set;
  std::map<std::string, std::set<std::string>> dates_with_quotes;  // equity -> dates
  for (const auto& q : quotes) {
    equity_set.insert(q.equity);
    dates_with_quotes[q.equity].insert(q.date);
  }
  if (equity_set.empty()) fail(ErrorKind::domain, "empty panel: no quotes");

  PanelDataset panel;
  panel.equities.assign(equity_set.begin(), equity_set.end());
  std::set<std::string> common;
  bool first = true;
  for (const auto& e : panel.equities) {
    std::set<std::string> usable;
    for (const auto& d : dates_with_quotes[e]) {
      if (close.count({d, e})) usable.insert(d);
    }
    if (first) {
      common = std::move(usable);
      first = false;
    } else {
      std::set<std::string> both;
      std::set_intersection(common.begin(), common.end(), usable.begin(), usable.end(),
                            std::inserter(both, both.begin()));
      common = std::move(both);
    }
  }
  if (common.empty()) fail(ErrorKind::domain, "empty panel: no date common to all equities");

  panel.dates.assign(common.begin(), common.end());
  panel.cells.resize(panel.dates.size() * panel.equities.size());
  std::map<std::string, std::size_t> date_index;
  for (std::size_t d = 0; d < panel.dates.size(); ++d) date_index[panel.dates[d]] = d;
  std::map<std::string, std::size_t> equity_index;
  for (std::size_t e = 0; e < panel.equities.size(); ++e) equity_index[panel.equities[e]] = e;

  for (const auto& q : quotes) {
    const auto it = date_index.find(q.date);
    if (it == date_index.end()) continue;
    panel.cell(it->second, equity_index[q.equity]).quotes.push_back({q.delta, q.tau, q.iv});
  }
  for (std::size_t d = 0; d < panel.dates.size(); ++d) {
    for (std::size_t e = 0; e < panel.equities.size(); ++e) {
      panel.cell(d, e).price = close.at({panel.dates[d], panel.equities[e]});
    }
  }
  return panel;
}

PanelDataset load_panel(const std::string& iv_path, const std::string& price_path) {
  std::ifstream iv(iv_path);
  if (!iv) fail(ErrorKind::io, "cannot open " + iv_path);
  std::ifstream px(price_path);
  if (!px) fail(ErrorKind::io, "cannot open " + price_path);
  return build_panel(read_iv_csv(iv), read_price_csv(px));
}

void write_iv_csv(std::ostream& out, const PanelDataset& panel) {
  out << "date,equity,delta,tau,iv\n";
  for (std::size_t d = 0; d < panel.n_dates(); ++d) {
    for (std::size_t e = 0; e < panel.n_equities(); ++e) {
      for (const auto& q : panel.cell(d, e).quotes) {
        out << panel.dates[d] << ',' << panel.equities[e] << ',' << format_double(q.delta) << ','
            << format_double(q.tau) << ',' << format_double(q.iv) << '\n';
      }
    }
  }
}

void write_price_csv(std::ostream& out, const PanelDataset& panel) {
  out << "date,equity,close\n";
  for (std::size_t d = 0; d < panel.n_dates(); ++d) {
    for (std::size_t e = 0; e < panel.n_equities(); ++e) {
      out << panel.dates[d] << ',' << panel.equities[e] << ','
          << format_double(panel.cell(d, e).price) << '\n';
    }
  }
}

// ---------------------------------------------------------------------------

std::size_t TransformSpec::index_of(const std::string& equity) const {
  const auto it = std::find(equities.begin(), equities.end(), equity);
  if (it == equities.end()) fail(ErrorKind::domain, "no transform fitted for equity " + equity);
  return static_cast<std::size_t>(it - equities.begin());
}

double tau_forward(double tau, double tau_max) { return 2.0 * std::sqrt(tau / tau_max) - 1.0; }

double tau_inverse(double x, double tau_max) {
  const double r = 0.5 * (x + 1.0);
  return tau_max * r * r;
}

double log_expm1(double sigma) { return std::log(std::expm1(sigma)); }

double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double iv_forward(const EquityTransform& t, double iv) { return t.iv_c0 + t.iv_c1 * log_expm1(iv); }

double iv_inverse(const EquityTransform& t, double x) { return softplus((x - t.iv_c0) / t.iv_c1); }

double price_forward(const EquityTransform& t, double price, double time_index) {
  return t.price_c0 + t.price_c1 * price - (t.detrend_beta0 + t.detrend_beta1 * time_index);
}

double price_inverse(const EquityTransform& t, double x, double time_index) {
  return (x + t.detrend_beta0 + t.detrend_beta1 * time_index - t.price_c0) / t.price_c1;
}

namespace {

std::pair<double, double> affine_from_quantiles(std::vector<double> sample, double q_low,
                                                double q_high, const std::string& what) {
  std::sort(sample.begin(), sample.end());
  const std::span<const double> s(sample);
  const double lo = sorted_quantile<double>(s, q_low);
  const double hi = sorted_quantile<double>(s, q_high);
  if (!(hi > lo)) fail(ErrorKind::ill_posed, "degenerate quantiles for " + what);
  return {-(hi + lo) / (hi - lo), 2.0 / (hi - lo)};
}

}  // namespace

TransformSpec fit_transforms(const PanelDataset& panel, double q_low, double q_high) {
  if (panel.coords != Coordinates::raw) fail(ErrorKind::domain, "fit_transforms needs a raw panel");
  if (panel.n_dates() == 0 || panel.n_equities() == 0) fail(ErrorKind::domain, "empty panel");
  if (!(q_low >= 0.0 && q_low < q_high && q_high <= 1.0)) {
    fail(ErrorKind::domain, "quantile levels must satisfy 0 <= q_low < q_high <= 1");
  }
  TransformSpec spec;
  spec.equities = panel.equities;
  spec.fit_length = static_cast<std::int64_t>(panel.n_dates());
  const auto n_dates = panel.n_dates();

  for (std::size_t e = 0; e < panel.n_equities(); ++e) {
    EquityTransform t;
    std::vector<double> ivs;
    std::vector<double> closes;
    for (std::size_t d = 0; d < n_dates; ++d) {
      const auto& cell = panel.cell(d, e);
      for (const auto& q : cell.quotes) {
        ivs.push_back(log_expm1(q.iv));
        spec.tau_max = std::max(spec.tau_max, q.tau);
      }
      closes.push_back(cell.price);
    }
    std::tie(t.iv_c0, t.iv_c1) =
        affine_from_quantiles(std::move(ivs), q_low, q_high, "iv of " + panel.equities[e]);
    std::tie(t.price_c0, t.price_c1) =
        affine_from_quantiles(closes, q_low, q_high, "price of " + panel.equities[e]);

    // OLS of the affine-transformed price on the observation index.
    const double n = static_cast<double>(n_dates);
    double mean_t = 0.0;
    double mean_y = 0.0;
    for (std::size_t d = 0; d < n_dates; ++d) {
      mean_t += static_cast<double>(d);
      mean_y += t.price_c0 + t.price_c1 * closes[d];
    }
    mean_t /= n;
    mean_y /= n;
    double sxy = 0.0;
    double sxx = 0.0;
    for (std::size_t d = 0; d < n_dates; ++d) {
      const double dt = static_cast<double>(d) - mean_t;
      sxy += dt * (t.price_c0 + t.price_c1 * closes[d] - mean_y);
      sxx += dt * dt;
    }
    t.detrend_beta1 = sxx > 0.0 ? sxy / sxx : 0.0;
    t.detrend_beta0 = mean_y - t.detrend_beta1 * mean_t;
    spec.per_equity.push_back(t);
  }
  return spec;
}

PanelDataset apply_transforms(const PanelDataset& panel, const TransformSpec& spec,
                              Direction direction, bool allow_extrapolation) {
  const bool forward = direction == Direction::forward;
  if (forward && panel.coords != Coordinates::raw) {
    fail(ErrorKind::domain, "forward transform expects raw coordinates");
  }
  if (!forward && panel.coords != Coordinates::transformed) {
    fail(ErrorKind::domain, "inverse transform expects transformed coordinates");
  }
  if (!forward && !allow_extrapolation) {
    const auto last = panel.first_time_index + static_cast<std::int64_t>(panel.n_dates()) - 1;
    if (panel.first_time_index < 0 || last >= spec.fit_length) {
      fail(ErrorKind::domain, "time index " + std::to_string(last) +
                                  " outside the detrend fit range [0," +
                                  std::to_string(spec.fit_length - 1) + "]");
    }
  }

  PanelDataset out = panel;
  out.coords = forward ? Coordinates::transformed : Coordinates::raw;
  for (std::size_t e = 0; e < panel.n_equities(); ++e) {
    const auto& t = spec.per_equity[spec.index_of(panel.equities[e])];
    for (std::size_t d = 0; d < panel.n_dates(); ++d) {
      const double time_index = static_cast<double>(panel.first_time_index) + static_cast<double>(d);
      auto& cell = out.cell(d, e);
      for (auto& q : cell.quotes) {
        if (forward) {
          q = {delta_forward(q.delta), tau_forward(q.tau, spec.tau_max), iv_forward(t, q.iv)};
        } else {
          q = {delta_inverse(q.delta), tau_inverse(q.tau, spec.tau_max), iv_inverse(t, q.iv)};
        }
      }
      cell.price = forward ? price_forward(t, cell.price, time_index)
                           : price_inverse(t, cell.price, time_index);
    }
  }
  return out;
}

nlohmann::json to_json(const TransformSpec& spec) {
  nlohmann::json j;
  j["version"] = TransformSpec::version;
  j["tau_max"] = spec.tau_max;
  j["fit_length"] = spec.fit_length;
  nlohmann::json eq = nlohmann::json::object();
  for (std::size_t e = 0; e < spec.equities.size(); ++e) {
    const auto& t = spec.per_equity[e];
    eq[spec.equities[e]] = {{"iv_c0", t.iv_c0},
                            {"iv_c1", t.iv_c1},
                            {"price_c0", t.price_c0},
                            {"price_c1", t.price_c1},
                            {"detrend_beta0", t.detrend_beta0},
                            {"detrend_beta1", t.detrend_beta1}};
  }
  j["equities"] = eq;
  j["order"] = spec.equities;
  return j;
}

TransformSpec transform_spec_from_json(const nlohmann::json& j) {
  try {
    if (j.at("version").get<int>() != TransformSpec::version) {
      fail(ErrorKind::format, "unsupported transform spec version");
    }
    TransformSpec spec;
    spec.tau_max = j.at("tau_max").get<double>();
    spec.fit_length = j.at("fit_length").get<std::int64_t>();
    spec.equities = j.at("order").get<std::vector<std::string>>();
    for (const auto& name : spec.equities) {
      const auto& o = j.at("equities").at(name);
      EquityTransform t;
      t.iv_c0 = o.at("iv_c0").get<double>();
      t.iv_c1 = o.at("iv_c1").get<double>();
      t.price_c0 = o.at("price_c0").get<double>();
      t.price_c1 = o.at("price_c1").get<double>();
      t.detrend_beta0 = o.at("detrend_beta0").get<double>();
      t.detrend_beta1 = o.at("detrend_beta1").get<double>();
      if (!(t.iv_c1 > 0.0) || t.price_c1 == 0.0) fail(ErrorKind::format, "invalid constants for " + name);
      spec.per_equity.push_back(t);
    }
    if (!(spec.tau_max > 0.0)) fail(ErrorKind::format, "tau_max must be positive");
    return spec;
  } catch (const nlohmann::json::exception& ex) {
    fail(ErrorKind::format, std::string("transform spec: ") + ex.what());
  }
}

// ---------------------------------------------------------------------------

std::vector<double> SynthConfig::default_deltas() {
  std::vector<double> d;
  for (int k = 0; k <= 16; ++k) d.push_back(0.10 + 0.05 * k);
  return d;
}

std::vector<double> SynthConfig::default_taus() {
  std::vector<double> t;
  for (int days : {10, 30, 60, 91, 122, 152, 182, 273, 365, 547, 730}) t.push_back(days / 365.0);
  return t;
}

void SynthConfig::validate() const {
  if (n_equities < 1) fail(ErrorKind::usage, "synth: n_equities must be >= 1");
  if (n_dates < 2) fail(ErrorKind::usage, "synth: n_dates must be >= 2");
  if (!valid_iso_date(start_date)) fail(ErrorKind::usage, "synth: invalid start_date");
  for (double d : deltas) {
    if (!(d > 0.0 && d < 1.0)) fail(ErrorKind::usage, "synth: deltas must lie in (0,1)");
  }
  for (double t : taus) {
    if (!(t > 0.0)) fail(ErrorKind::usage, "synth: taus must be positive");
  }
  if (mode == SynthMode::flat && !(sigma0 > 0.0)) fail(ErrorKind::usage, "synth: sigma0 must be positive");
  if (!(std::abs(leverage) <= 1.0) || !(price_common >= 0.0 && price_common <= 1.0)) {
    fail(ErrorKind::usage, "synth: correlations must lie in [-1,1]");
  }
}

nlohmann::json to_json(const SynthConfig& c) {
  return {{"mode", c.mode == SynthMode::flat ? "flat" : "smile"},
          {"n_equities", c.n_equities},
          {"n_dates", c.n_dates},
          {"start_date", c.start_date},
          {"deltas", c.deltas},
          {"taus", c.taus},
          {"sigma0", c.sigma0},
          {"level_mean", c.level_mean},
          {"level_spacing", c.level_spacing},
          {"level_reversion", c.level_reversion},
          {"level_volvol", c.level_volvol},
          {"skew_mean", c.skew_mean},
          {"skew_reversion", c.skew_reversion},
          {"skew_vol", c.skew_vol},
          {"convexity_mean", c.convexity_mean},
          {"convexity_reversion", c.convexity_reversion},
          {"convexity_vol", c.convexity_vol},
          {"term_slope", c.term_slope},
          {"term_slope_reversion", c.term_slope_reversion},
          {"term_slope_vol", c.term_slope_vol},
          {"smile_slope", c.smile_slope},
          {"price_drift", c.price_drift},
          {"leverage", c.leverage},
          {"price_common", c.price_common}};
}

SynthConfig synth_config_from_json(const nlohmann::json& j) {
  SynthConfig c;
  try {
    if (j.contains("mode")) {
      const auto mode = j.at("mode").get<std::string>();
      if (mode == "flat") {
        c.mode = SynthMode::flat;
      } else if (mode == "smile") {
        c.mode = SynthMode::smile;
      } else {
        fail(ErrorKind::usage, "synth: unknown mode " + mode);
      }
    }
    auto opt = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    opt("n_equities", c.n_equities);
    opt("n_dates", c.n_dates);
    opt("start_date", c.start_date);
    opt("deltas", c.deltas);
    opt("taus", c.taus);
    opt("sigma0", c.sigma0);
    opt("level_mean", c.level_mean);
    opt("level_spacing", c.level_spacing);
    opt("level_reversion", c.level_reversion);
    opt("level_volvol", c.level_volvol);
    opt("skew_mean", c.skew_mean);
    opt("skew_reversion", c.skew_reversion);
    opt("skew_vol", c.skew_vol);
    opt("convexity_mean", c.convexity_mean);
    opt("convexity_reversion", c.convexity_reversion);
    opt("convexity_vol", c.convexity_vol);
    opt("term_slope", c.term_slope);
    opt("term_slope_reversion", c.term_slope_reversion);
    opt("term_slope_vol", c.term_slope_vol);
    opt("smile_slope", c.smile_slope);
    opt("price_drift", c.price_drift);
    opt("leverage", c.leverage);
    opt("price_common", c.price_common);
  } catch (const nlohmann::json::exception& ex) {
    fail(ErrorKind::usage, std::string("synth config: ") + ex.what());
  }
  return c;
}

namespace {

std::vector<std::string> business_days(const std::string& start, int count) {
  using namespace std::chrono;
  const int y = std::stoi(start.substr(0, 4));
  const unsigned m = static_cast<unsigned>(std::stoi(start.substr(5, 2)));
  const unsigned d = static_cast<unsigned>(std::stoi(start.substr(8, 2)));
  sys_days day{year_month_day{year{y}, month{m}, std::chrono::day{d}}};
  std::vector<std::string> out;
  while (static_cast<int>(out.size()) < count) {
    const weekday wd{day};
    if (wd != Saturday && wd != Sunday) {
      const year_month_day ymd{day};
      char buf[16];
      std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                    static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
      out.emplace_back(buf);
    }
    day += days{1};
  }
  return out;
}

}  // namespace

PanelDataset synth_market(const SynthConfig& config_in, std::uint64_t seed) {
  SynthConfig config = config_in;
  if (config.deltas.empty()) config.deltas = SynthConfig::default_deltas();
  if (config.taus.empty()) config.taus = SynthConfig::default_taus();
  config.validate();

  const auto n_eq = static_cast<std::size_t>(config.n_equities);
  const auto n_dates = static_cast<std::size_t>(config.n_dates);
  PanelDataset panel;
  panel.dates = business_days(config.start_date, config.n_dates);
  for (std::size_t e = 0; e < n_eq; ++e) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "EQ%02zu", e);
    panel.equities.emplace_back(buf);
  }
  panel.cells.resize(n_dates * n_eq);

  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double dt = 1.0 / 252.0;
  const double sqdt = std::sqrt(dt);

  std::vector<double> log_level(n_eq);
  std::vector<double> skew(n_eq, config.skew_mean);
  std::vector<double> convexity(n_eq, config.convexity_mean);
  std::vector<double> term(n_eq, config.term_slope);
  std::vector<double> price(n_eq);
  std::vector<double> level_mean(n_eq);
  for (std::size_t e = 0; e < n_eq; ++e) {
    level_mean[e] = std::log(config.level_mean + config.level_spacing * static_cast<double>(e));
    log_level[e] = level_mean[e];
    price[e] = 100.0 * static_cast<double>(e + 1);
  }

  auto surface_iv = [&](std::size_t e, double delta, double tau) {
    if (config.mode == SynthMode::flat) return config.sigma0;
    const double x = delta - 0.5;
    const double root = std::sqrt(tau / 0.25) - 1.0;
    const double decay = std::exp(config.smile_slope * root);
    // Softplus of a four-factor affine form, so the factors are linear after the IV transform.
    return softplus(log_level[e] + term[e] * root + decay * (skew[e] * x + convexity[e] * x * x));
  };

  for (std::size_t d = 0; d < n_dates; ++d) {
    for (std::size_t e = 0; e < n_eq; ++e) {
      auto& cell = panel.cell(d, e);
      for (double tau : config.taus) {
        for (double delta : config.deltas) cell.quotes.push_back({delta, tau, surface_iv(e, delta, tau)});
      }
      cell.price = price[e];
    }
    if (d + 1 == n_dates) break;

    const double common = normal(rng);
    for (std::size_t e = 0; e < n_eq; ++e) {
      const double z_price = std::sqrt(config.price_common) * common +
                             std::sqrt(1.0 - config.price_common) * normal(rng);
      const double z_level = config.leverage * z_price +
                             std::sqrt(1.0 - config.leverage * config.leverage) * normal(rng);
      const double z_skew = normal(rng);
      const double z_conv = normal(rng);
      const double z_term = normal(rng);
      const double vol = config.mode == SynthMode::flat ? config.sigma0 : std::exp(log_level[e]);
      price[e] *= std::exp((config.price_drift - 0.5 * vol * vol) * dt + vol * sqdt * z_price);
      if (config.mode == SynthMode::flat) continue;
      log_level[e] += config.level_reversion * (level_mean[e] - log_level[e]) * dt +
                      config.level_volvol * sqdt * z_level;
      log_level[e] = std::clamp(log_level[e], std::log(0.08), std::log(1.2));
      skew[e] += config.skew_reversion * (config.skew_mean - skew[e]) * dt + config.skew_vol * sqdt * z_skew;
      skew[e] = std::clamp(skew[e], -0.5, 1.0);
      convexity[e] += config.convexity_reversion * (config.convexity_mean - convexity[e]) * dt +
                      config.convexity_vol * sqdt * z_conv;
      convexity[e] = std::clamp(convexity[e], 0.0, 3.0);
      term[e] += config.term_slope_reversion * (config.term_slope - term[e]) * dt + config.term_slope_vol * sqdt * z_term;
      term[e] = std::clamp(term[e], 0.0, 0.6);
    }
  }
  return panel;
}

}  // namespace ivgen
