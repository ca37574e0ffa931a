#include "ivgen/generator.hpp"

#include "ivgen/parallel.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cstring>
#include <cmath>
#include <iomanip>
#include <limits>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

namespace ivgen {

namespace {

constexpr Eigen::Index scenario_chunk = 64;

}  // namespace

ScenarioSet generate_paths(const NsdeModel& model, const Matrix& raw_window, Eigen::Index n_steps,
                           Eigen::Index n_scenarios, std::uint64_t base_seed, int threads,
                           std::int64_t origin_time_index) {
  if (n_steps <= 0 || n_scenarios <= 0) fail(ErrorKind::domain, "n_steps and n_scenarios must be positive");
  model.validate();
  const Eigen::Index d = model.state_dim();
  const Eigen::Index lag = model.lag;
  if (raw_window.cols() != d || raw_window.rows() < lag) {
    fail(ErrorKind::shape, "origin window must be at least " + std::to_string(lag) + " x " + std::to_string(d));
  }

  ScenarioSet scen;
  scen.base_seed = base_seed;
  scen.n_steps = n_steps;
  scen.n_scenarios = n_scenarios;
  scen.state_dim = d;
  scen.origin_window = model.normalize(raw_window.bottomRows(lag));
  scen.origin_time_index = origin_time_index;
  scen.paths.resize(static_cast<std::size_t>(n_scenarios * n_steps * d));

  // Scenarios are simulated in fixed-size batches so the floating point work
  // per scenario does not depend on the thread count.
  const auto n_chunks = static_cast<std::size_t>((n_scenarios + scenario_chunk - 1) / scenario_chunk);
  parallel_for(n_chunks, threads, [&](std::size_t c) {
    const Eigen::Index s0 = static_cast<Eigen::Index>(c) * scenario_chunk;
    const Eigen::Index width = std::min(scenario_chunk, n_scenarios - s0);
    std::vector<Rng> rngs;
    rngs.reserve(static_cast<std::size_t>(width));
    for (Eigen::Index i = 0; i < width; ++i) rngs.push_back(make_rng(base_seed, static_cast<std::uint64_t>(s0 + i)));

    std::vector<Matrix> steps;
    steps.reserve(static_cast<std::size_t>(lag));
    for (Eigen::Index s = 0; s < lag; ++s) {
      steps.push_back(scen.origin_window.row(s).transpose().replicate(1, width));
    }
    for (Eigen::Index k = 0; k < n_steps; ++k) {
      const Matrix nu = recurrent_forward_batch(model.drift_net, steps);
      const Matrix lflat = recurrent_forward_batch(model.diff_net, steps);
      Matrix next(d, width);
      for (Eigen::Index i = 0; i < width; ++i) {
        const auto law = make_conditional(steps.back().col(i), nu.col(i), unpack_tril(lflat.col(i), d),
                                          model.dt, model.eps);
        next.col(i) = sample(law, rngs[static_cast<std::size_t>(i)]);
        double* dst = scen.paths.data() + ((s0 + i) * n_steps + k) * d;
        Eigen::Map<Vector>(dst, d) = next.col(i);
      }
      std::rotate(steps.begin(), steps.begin() + 1, steps.end());
      steps.back() = std::move(next);
    }
  });
  return scen;
}

// ---------------------------------------------------------------------------

SurfaceDecoder::SurfaceDecoder(const NsdeModel& model, const FpcaModel& fpca, const TransformSpec& transforms,
                               MarketGrid grid)
    : model_(&model), fpca_(&fpca), transforms_(&transforms), grid_(std::move(grid)) {
  if (grid_.deltas.empty()) grid_.deltas = SynthConfig::default_deltas();
  if (grid_.taus.empty()) grid_.taus = SynthConfig::default_taus();
  const Eigen::Index m = fpca.n_components();
  const Eigen::Index e = n_equities();
  if (model.state_dim() != m * e + e) {
    fail(ErrorKind::shape, "state dimension " + std::to_string(model.state_dim()) + " does not match " +
                               std::to_string(e) + " equities with " + std::to_string(m) + " components");
  }
  for (double delta : grid_.deltas) {
    if (!(delta >= 0.0 && delta <= 1.0)) fail(ErrorKind::domain, "grid delta outside [0,1]");
  }
  for (double tau : grid_.taus) {
    if (!(tau > 0.0 && tau <= transforms.tau_max * (1.0 + 1e-12))) {
      fail(ErrorKind::domain, "grid maturity outside (0, tau_max]");
    }
  }
  const auto n_delta = static_cast<Eigen::Index>(grid_.deltas.size());
  grid_basis_.resize(static_cast<Eigen::Index>(grid_.taus.size()) * n_delta, fpca.basis.size());
  for (std::size_t t = 0; t < grid_.taus.size(); ++t) {
    const double x = std::min(1.0, tau_forward(grid_.taus[t], transforms.tau_max));
    for (std::size_t j = 0; j < grid_.deltas.size(); ++j) {
      grid_basis_.row(static_cast<Eigen::Index>(t) * n_delta + static_cast<Eigen::Index>(j)) =
          fpca.basis.row<double>(x, delta_forward(grid_.deltas[j])).transpose();
    }
  }
}

Vector SurfaceDecoder::raw_state(const Vector& normalized) const {
  return model_->denormalize(normalized.transpose()).transpose();
}

double SurfaceDecoder::iv(const Vector& raw, Eigen::Index equity, double delta, double tau) const {
  const Eigen::Index m = fpca_->n_components();
  const double x = std::min(1.0, tau_forward(tau, transforms_->tau_max));
  const double y = delta_forward(delta);
  const double transformed = reconstruct_surface(*fpca_, raw.segment(equity * m, m), x, y);
  return iv_inverse(transforms_->per_equity[static_cast<std::size_t>(equity)], transformed);
}

double SurfaceDecoder::price(const Vector& raw, Eigen::Index equity, double time_index) const {
  const Eigen::Index col = fpca_->n_components() * n_equities() + equity;
  return price_inverse(transforms_->per_equity[static_cast<std::size_t>(equity)], raw(col), time_index);
}

Matrix SurfaceDecoder::surface(const Vector& raw, Eigen::Index equity) const {
  const Eigen::Index m = fpca_->n_components();
  const Vector coeffs = fpca_->mean_coeffs + fpca_->components.transpose() * raw.segment(equity * m, m);
  const Vector flat = grid_basis_ * coeffs;
  const auto& t = transforms_->per_equity[static_cast<std::size_t>(equity)];
  const auto n_tau = static_cast<Eigen::Index>(grid_.taus.size());
  const auto n_delta = static_cast<Eigen::Index>(grid_.deltas.size());
  Matrix out(n_tau, n_delta);
  for (Eigen::Index i = 0; i < n_tau; ++i) {
    for (Eigen::Index j = 0; j < n_delta; ++j) out(i, j) = iv_inverse(t, flat(i * n_delta + j));
  }
  return out;
}

DecodedScenarios decode_scenarios(const ScenarioSet& scen, const SurfaceDecoder& decoder, int threads) {
  DecodedScenarios out;
  out.grid = decoder.grid();
  out.equities = decoder.equities();
  out.n_scenarios = scen.n_scenarios;
  out.n_steps = scen.n_steps;
  const Eigen::Index e = out.n_equities();
  const Eigen::Index block = out.n_tau() * out.n_delta();
  out.iv.resize(static_cast<std::size_t>(scen.n_scenarios * scen.n_steps * e * block));
  out.price.resize(static_cast<std::size_t>(scen.n_scenarios * scen.n_steps * e));
  parallel_for(static_cast<std::size_t>(scen.n_scenarios), threads, [&](std::size_t si) {
    const auto s = static_cast<Eigen::Index>(si);
    for (Eigen::Index k = 0; k < scen.n_steps; ++k) {
      const Vector raw = decoder.raw_state(scen.state(s, k));
      const double time_index = static_cast<double>(scen.origin_time_index + k + 1);
      for (Eigen::Index q = 0; q < e; ++q) {
        const Eigen::Index cell = (s * scen.n_steps + k) * e + q;
        Eigen::Map<RowMatrix>(out.iv.data() + cell * block, out.n_tau(), out.n_delta()) = decoder.surface(raw, q);
        out.price[static_cast<std::size_t>(cell)] = decoder.price(raw, q, time_index);
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// CSV

void write_scenarios_csv(std::ostream& out, const DecodedScenarios& dec) {
  out << "scenario,step,equity,kind,key1,key2,value\n" << std::setprecision(17);
  for (Eigen::Index s = 0; s < dec.n_scenarios; ++s) {
    for (Eigen::Index k = 0; k < dec.n_steps; ++k) {
      for (Eigen::Index e = 0; e < dec.n_equities(); ++e) {
        const auto& name = dec.equities[static_cast<std::size_t>(e)];
        const auto surf = dec.surface(s, k, e);
        for (Eigen::Index i = 0; i < dec.n_tau(); ++i) {
          for (Eigen::Index j = 0; j < dec.n_delta(); ++j) {
            out << s << ',' << k + 1 << ',' << name << ",iv," << dec.grid.deltas[static_cast<std::size_t>(j)] << ','
                << dec.grid.taus[static_cast<std::size_t>(i)] << ',' << surf(i, j) << '\n';
          }
        }
        out << s << ',' << k + 1 << ',' << name << ",price,,," << dec.spot(s, k, e) << '\n';
      }
    }
  }
}

namespace {

double parse_double(const std::string& field, std::size_t line) {
  double v = 0.0;
  const auto [p, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc() || p != field.data() + field.size()) {
    fail(ErrorKind::parse, "line " + std::to_string(line) + ": bad number '" + field + "'");
  }
  return v;
}

long parse_long(const std::string& field, std::size_t line) {
  long v = 0;
  const auto [p, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc() || p != field.data() + field.size()) {
    fail(ErrorKind::parse, "line " + std::to_string(line) + ": bad integer '" + field + "'");
  }
  return v;
}

}  // namespace

DecodedScenarios read_scenarios_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("scenario,step,equity,kind,key1,key2,value", 0) != 0) {
    fail(ErrorKind::parse, "scenario file: unexpected header");
  }
  struct Row {
    long s, k;
    std::size_t e;
    bool is_iv;
    double delta, tau, value;
  };
  std::vector<Row> rows;
  std::vector<std::string> equities;
  std::map<std::string, std::size_t> eq_index;
  std::vector<double> deltas, taus;
  std::size_t line_no = 1;
  std::array<std::string, 7> f;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::size_t n = 0;
    while (n < f.size() && std::getline(ss, f[n], ',')) ++n;
    if (n == 6 && line.back() == ',') f[n++].clear();
    if (n != 7) fail(ErrorKind::parse, "line " + std::to_string(line_no) + ": expected 7 fields");
    auto [it, inserted] = eq_index.emplace(f[2], equities.size());
    if (inserted) equities.push_back(f[2]);
    Row r{parse_long(f[0], line_no), parse_long(f[1], line_no) - 1, it->second, f[3] == "iv", 0.0, 0.0,
          parse_double(f[6], line_no)};
    if (r.is_iv) {
      r.delta = parse_double(f[4], line_no);
      r.tau = parse_double(f[5], line_no);
      deltas.push_back(r.delta);
      taus.push_back(r.tau);
    } else if (f[3] != "price") {
      fail(ErrorKind::parse, "line " + std::to_string(line_no) + ": kind must be iv or price");
    }
    if (r.s < 0 || r.k < 0) fail(ErrorKind::parse, "line " + std::to_string(line_no) + ": negative index");
    rows.push_back(r);
  }
  auto unique_sorted = [](std::vector<double>& v) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
  };
  unique_sorted(deltas);
  unique_sorted(taus);

  DecodedScenarios dec;
  dec.grid = {deltas, taus};
  dec.equities = equities;
  for (const auto& r : rows) {
    dec.n_scenarios = std::max<Eigen::Index>(dec.n_scenarios, r.s + 1);
    dec.n_steps = std::max<Eigen::Index>(dec.n_steps, r.k + 1);
  }
  const Eigen::Index block = dec.n_tau() * dec.n_delta();
  const auto cells = static_cast<std::size_t>(dec.n_scenarios * dec.n_steps * dec.n_equities());
  dec.iv.assign(cells * static_cast<std::size_t>(block), std::numeric_limits<double>::quiet_NaN());
  dec.price.assign(cells, std::numeric_limits<double>::quiet_NaN());
  for (const auto& r : rows) {
    const auto cell = (r.s * dec.n_steps + r.k) * dec.n_equities() + static_cast<Eigen::Index>(r.e);
    if (r.is_iv) {
      const auto i = std::lower_bound(taus.begin(), taus.end(), r.tau) - taus.begin();
      const auto j = std::lower_bound(deltas.begin(), deltas.end(), r.delta) - deltas.begin();
      dec.iv[static_cast<std::size_t>(cell * block + i * dec.n_delta() + j)] = r.value;
    } else {
      dec.price[static_cast<std::size_t>(cell)] = r.value;
    }
  }
  const auto missing = [](double v) { return std::isnan(v); };
  if (std::any_of(dec.iv.begin(), dec.iv.end(), missing) || std::any_of(dec.price.begin(), dec.price.end(), missing)) {
    fail(ErrorKind::parse, "scenario file does not cover a full grid for every scenario and step");
  }
  return dec;
}

// ---------------------------------------------------------------------------
// Binary

namespace {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void put_doubles(std::ostream& out, const double* p, std::size_t n) {
  out.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * sizeof(double)));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) fail(ErrorKind::format, "binary file truncated");
  return v;
}

void get_doubles(std::istream& in, double* p, std::size_t n) {
  if (!in.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n * sizeof(double)))) {
    fail(ErrorKind::format, "binary file truncated");
  }
}

void expect_magic(std::istream& in, const char (&magic)[5]) {
  char buf[4];
  if (!in.read(buf, 4) || std::memcmp(buf, magic, 4) != 0) {
    fail(ErrorKind::format, std::string("not a ") + magic + " file");
  }
  if (const auto v = get<std::uint32_t>(in); v != 1) {
    fail(ErrorKind::format, std::string(magic) + " version " + std::to_string(v) + " is not supported");
  }
}

}  // namespace

void write_scenarios_binary(std::ostream& out, const DecodedScenarios& dec) {
  out.write("IVSC", 4);
  put<std::uint32_t>(out, 1);
  for (auto v : {dec.n_scenarios, dec.n_steps, dec.n_equities(), dec.n_delta(), dec.n_tau()}) {
    put<std::uint64_t>(out, static_cast<std::uint64_t>(v));
  }
  put_doubles(out, dec.grid.deltas.data(), dec.grid.deltas.size());
  put_doubles(out, dec.grid.taus.data(), dec.grid.taus.size());
  for (const auto& name : dec.equities) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
  }
  put_doubles(out, dec.iv.data(), dec.iv.size());
  put_doubles(out, dec.price.data(), dec.price.size());
}

DecodedScenarios read_scenarios_binary(std::istream& in) {
  expect_magic(in, "IVSC");
  DecodedScenarios dec;
  dec.n_scenarios = static_cast<Eigen::Index>(get<std::uint64_t>(in));
  dec.n_steps = static_cast<Eigen::Index>(get<std::uint64_t>(in));
  const auto n_eq = get<std::uint64_t>(in);
  dec.grid.deltas.resize(get<std::uint64_t>(in));
  dec.grid.taus.resize(get<std::uint64_t>(in));
  get_doubles(in, dec.grid.deltas.data(), dec.grid.deltas.size());
  get_doubles(in, dec.grid.taus.data(), dec.grid.taus.size());
  for (std::uint64_t e = 0; e < n_eq; ++e) {
    std::string name(get<std::uint32_t>(in), '\0');
    if (!in.read(name.data(), static_cast<std::streamsize>(name.size()))) fail(ErrorKind::format, "binary file truncated");
    dec.equities.push_back(std::move(name));
  }
  const auto cells = static_cast<std::size_t>(dec.n_scenarios * dec.n_steps * dec.n_equities());
  dec.iv.resize(cells * dec.grid.deltas.size() * dec.grid.taus.size());
  dec.price.resize(cells);
  get_doubles(in, dec.iv.data(), dec.iv.size());
  get_doubles(in, dec.price.data(), dec.price.size());
  return dec;
}

void write_paths_binary(std::ostream& out, const ScenarioSet& scen) {
  out.write("IVPT", 4);
  put<std::uint32_t>(out, 1);
  put<std::uint64_t>(out, scen.base_seed);
  put<std::uint64_t>(out, static_cast<std::uint64_t>(scen.n_steps));
  put<std::uint64_t>(out, static_cast<std::uint64_t>(scen.n_scenarios));
  put<std::uint64_t>(out, static_cast<std::uint64_t>(scen.state_dim));
  put<std::uint64_t>(out, static_cast<std::uint64_t>(scen.origin_window.rows()));
  put<std::int64_t>(out, scen.origin_time_index);
  const RowMatrix origin = scen.origin_window;
  put_doubles(out, origin.data(), static_cast<std::size_t>(origin.size()));
  put_doubles(out, scen.paths.data(), scen.paths.size());
}

ScenarioSet read_paths_binary(std::istream& in) {
  expect_magic(in, "IVPT");
  ScenarioSet scen;
  scen.base_seed = get<std::uint64_t>(in);
  scen.n_steps = static_cast<Eigen::Index>(get<std::uint64_t>(in));
  scen.n_scenarios = static_cast<Eigen::Index>(get<std::uint64_t>(in));
  scen.state_dim = static_cast<Eigen::Index>(get<std::uint64_t>(in));
  const auto lag = static_cast<Eigen::Index>(get<std::uint64_t>(in));
  scen.origin_time_index = get<std::int64_t>(in);
  RowMatrix origin(lag, scen.state_dim);
  get_doubles(in, origin.data(), static_cast<std::size_t>(origin.size()));
  scen.origin_window = origin;
  scen.paths.resize(static_cast<std::size_t>(scen.n_scenarios * scen.n_steps * scen.state_dim));
  get_doubles(in, scen.paths.data(), scen.paths.size());
  return scen;
}

}  // namespace ivgen
