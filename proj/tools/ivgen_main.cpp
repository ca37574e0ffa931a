#include "ivgen/arbitrage.hpp"
#include "ivgen/basis.hpp"
#include "ivgen/checkpoint.hpp"
#include "ivgen/diagnostics.hpp"
#include "ivgen/fpca.hpp"
#include "ivgen/generator.hpp"
#include "ivgen/hedging.hpp"
#include "ivgen/market_data.hpp"
#include "ivgen/training.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

namespace fs = std::filesystem;
using namespace ivgen;

namespace {

struct Common {
  std::uint64_t seed = 0;
  std::string config;
  std::string out = ".";
  int threads = 1;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--seed", c.seed, "Random seed");
  cmd->add_option("--config", c.config, "JSON file overriding flags")->check(CLI::ExistingFile);
  cmd->add_option("--out", c.out, "Output directory");
  cmd->add_option("--threads", c.threads, "Worker threads")->check(CLI::PositiveNumber);
}

nlohmann::json read_config(const Common& c) {
  if (c.config.empty()) return nlohmann::json::object();
  std::ifstream in(c.config);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& ex) {
    fail(ErrorKind::usage, "config " + c.config + ": " + ex.what());
  }
}

template <typename T>
void override(const nlohmann::json& j, const char* key, T& field) {
  if (!j.contains(key)) return;
  try {
    field = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& ex) {
    fail(ErrorKind::usage, std::string("config key ") + key + ": " + ex.what());
  }
}

fs::path out_dir(const Common& c) {
  std::error_code ec;
  fs::create_directories(c.out, ec);
  if (ec) fail(ErrorKind::io, "cannot create " + c.out + ": " + ec.message());
  return c.out;
}

std::ofstream open_out(const fs::path& p, bool binary = false) {
  std::ofstream f(p, binary ? std::ios::binary : std::ios::out);
  if (!f) fail(ErrorKind::io, "cannot open " + p.string() + " for writing");
  return f;
}

std::ifstream open_in(const std::string& p, bool binary = false) {
  std::ifstream f(p, binary ? std::ios::binary : std::ios::in);
  if (!f) fail(ErrorKind::io, "cannot open " + p);
  return f;
}

void write_json(const fs::path& p, const nlohmann::json& j) { open_out(p) << j.dump(2) << '\n'; }

NsdeModel trained_model(const Checkpoint& ck) {
  if (!ck.model) fail(ErrorKind::usage, "checkpoint has no trained networks; run train first");
  return *ck.model;
}

// ---------------------------------------------------------------------------

void cmd_synth(const Common& c, SynthConfig cfg) {
  const auto j = read_config(c);
  if (!j.empty()) {
    auto merged = to_json(cfg);
    merged.update(j);
    cfg = synth_config_from_json(merged);
  }
  const auto panel = synth_market(cfg, c.seed);
  const auto dir = out_dir(c);
  auto iv = open_out(dir / "iv.csv");
  write_iv_csv(iv, panel);
  auto px = open_out(dir / "prices.csv");
  write_price_csv(px, panel);
}

struct FitArgs {
  std::string iv, prices;
  int order = 4;
  double threshold = 0.995;
};

void cmd_fit(const Common& c, FitArgs a) {
  const auto j = read_config(c);
  override(j, "order", a.order);
  override(j, "threshold", a.threshold);
  const auto panel = load_panel(a.iv, a.prices);
  Checkpoint ck;
  ck.transforms = fit_transforms(panel);
  const auto transformed = apply_transforms(panel, ck.transforms, Direction::forward);
  const auto coeffs = project_panel(enumerate_basis(a.order), transformed);
  ck.fpca = fit_fpca(coeffs, a.threshold);
  const auto series = build_fpcc_series(ck.fpca, transformed);

  const auto dir = out_dir(c);
  save_checkpoint((dir / "model.ivgn").string(), ck);
  auto cf = open_out(dir / "coefficients.csv");
  write_coefficients_csv(cf, coeffs);
  auto st = open_out(dir / "states.csv");
  write_states_csv(st, series);
  write_json(dir / "transforms.json", to_json(ck.transforms));
  write_json(dir / "fpca.json", to_json(ck.fpca));
}

struct TrainArgs {
  std::string checkpoint, states;
  NsdeShape shape;
  TrainConfig train;
  bool quiet = false;
};

void cmd_train(const Common& c, TrainArgs a) {
  a.train.seed = c.seed;
  const auto j = read_config(c);
  a.train = train_config_from_json(j, a.train);
  override(j, "hidden_dim", a.shape.hidden_dim);
  override(j, "lag", a.shape.lag);
  override(j, "n_layers", a.shape.n_layers);
  override(j, "eps", a.shape.eps);
  override(j, "dt", a.shape.dt);

  Checkpoint ck = load_checkpoint(a.checkpoint);
  auto in = open_in(a.states);
  const auto series = read_states_csv(in);
  if (series.equities != ck.transforms.equities) fail(ErrorKind::shape, "states and checkpoint disagree on equities");
  a.shape.state_dim = ck.state_dim();
  if (series.states.cols() != a.shape.state_dim) fail(ErrorKind::shape, "states do not match the checkpoint layout");

  Rng rng(a.train.seed);
  const NsdeModel init = make_model(a.shape, rng);
  const bool quiet = a.quiet;
  auto result = train_three_stage(init, series.states, a.train, [quiet](const TrainLogRow& r) {
    if (!quiet && r.iteration % 500 == 0) {
      std::cerr << "stage " << r.stage << " iteration " << r.iteration << " loss " << r.loss << '\n';
    }
  });
  ck.model = std::move(result.model);
  const auto dir = out_dir(c);
  save_checkpoint((dir / "model.ivgn").string(), ck);
  auto log = open_out(dir / "train_log.csv");
  write_train_log_csv(log, result.log);
}

struct GenerateArgs {
  std::string checkpoint, states, format = "csv";
  Eigen::Index n_scenarios = 10000;
  Eigen::Index n_steps = 30;
};

void cmd_generate(const Common& c, GenerateArgs a) {
  const auto j = read_config(c);
  override(j, "n_scenarios", a.n_scenarios);
  override(j, "n_steps", a.n_steps);
  override(j, "format", a.format);
  if (a.format != "csv" && a.format != "binary") fail(ErrorKind::usage, "format must be csv or binary");
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const NsdeModel model = trained_model(ck);
  auto in = open_in(a.states);
  const auto series = read_states_csv(in);
  if (series.states.cols() != model.state_dim()) fail(ErrorKind::shape, "states do not match the checkpoint layout");
  const auto origin = static_cast<std::int64_t>(series.states.rows()) - 1;
  const auto scen = generate_paths(model, series.states, a.n_steps, a.n_scenarios, c.seed, c.threads, origin);
  const SurfaceDecoder decoder(model, ck.fpca, ck.transforms);
  const auto decoded = decode_scenarios(scen, decoder, c.threads);

  const auto dir = out_dir(c);
  auto paths = open_out(dir / "paths.bin", true);
  write_paths_binary(paths, scen);
  if (a.format == "csv") {
    auto f = open_out(dir / "scenarios.csv");
    write_scenarios_csv(f, decoded);
  } else {
    auto f = open_out(dir / "scenarios.bin", true);
    write_scenarios_binary(f, decoded);
  }
}

DecodedScenarios load_scenarios(const std::string& path) {
  if (fs::path(path).extension() == ".bin") {
    auto in = open_in(path, true);
    return read_scenarios_binary(in);
  }
  auto in = open_in(path);
  return read_scenarios_csv(in);
}

struct ArbArgs {
  std::string iv, prices, scenarios;
  std::size_t window = 30;
};

void cmd_arb(const Common& c, ArbArgs a) {
  const auto j = read_config(c);
  override(j, "window", a.window);
  const auto panel = load_panel(a.iv, a.prices);
  const auto observed = arbitrage_report(panel, a.window, c.threads);
  ArbReport simulated;
  if (!a.scenarios.empty()) simulated = arbitrage_report(load_scenarios(a.scenarios), c.threads);
  const auto dir = out_dir(c);
  auto f = open_out(dir / "arbitrage.csv");
  write_arb_tables_csv(f, observed, simulated);
}

struct HedgeArgs {
  std::string checkpoint, paths;
  int expiry = 30;
};

void cmd_hedge(const Common& c, HedgeArgs a) {
  const auto j = read_config(c);
  override(j, "expiry", a.expiry);
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const NsdeModel model = trained_model(ck);
  auto in = open_in(a.paths, true);
  const auto scen = read_paths_binary(in);
  if (scen.state_dim != model.state_dim()) fail(ErrorKind::shape, "paths do not match the checkpoint layout");
  const SurfaceDecoder decoder(model, ck.fpca, ck.transforms);
  const auto dists = hedge_distribution(scen, decoder, a.expiry, c.threads);
  const auto dir = out_dir(c);
  auto p = open_out(dir / "pnl.csv");
  write_pnl_csv(p, dists);
  auto q = open_out(dir / "pnl_quantiles.csv");
  write_pnl_quantiles_csv(q, dists);
}

struct DiagnoseArgs {
  std::string checkpoint, states, paths;
  DiagnosticsOptions options;
};

void cmd_diagnose(const Common& c, DiagnoseArgs a) {
  const auto j = read_config(c);
  override(j, "max_lag", a.options.max_lag);
  override(j, "windows", a.options.windows);
  override(j, "pairs", a.options.pairs);
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const NsdeModel model = trained_model(ck);
  auto in = open_in(a.states);
  const auto series = read_states_csv(in);
  std::optional<ScenarioSet> scen;
  if (!a.paths.empty()) {
    auto p = open_in(a.paths, true);
    scen = read_paths_binary(p);
  }
  const auto report = diagnostics_report(model, series, scen ? &*scen : nullptr, a.options);
  write_json(out_dir(c) / "diagnostics.json", report);
}

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::usage: return 1;
    case ErrorKind::numerical: return 3;
    default: return 2;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Implied volatility surface generator"};
  app.require_subcommand(1);
  std::string active = "ivgen";

  Common common;
  SynthConfig synth;
  std::string synth_mode = "smile";
  auto* s = app.add_subcommand("synth", "Write a synthetic panel with a known law");
  add_common(s, common);
  s->add_option("--equities", synth.n_equities, "Number of equities");
  s->add_option("--dates", synth.n_dates, "Number of business days");
  s->add_option("--mode", synth_mode, "smile or flat")->check(CLI::IsMember({"smile", "flat"}));
  s->add_option("--sigma", synth.sigma0, "Volatility of the flat mode");

  FitArgs fit;
  auto* f = app.add_subcommand("fit", "Transforms, basis projection and FPCA");
  add_common(f, common);
  f->add_option("--iv", fit.iv, "IV quotes CSV")->required()->check(CLI::ExistingFile);
  f->add_option("--prices", fit.prices, "Close prices CSV")->required()->check(CLI::ExistingFile);
  f->add_option("--order", fit.order, "Total degree of the tensor Legendre basis");
  f->add_option("--threshold", fit.threshold, "Explained-variance threshold");

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Three-stage neural SDE training");
  add_common(t, common);
  t->add_option("--checkpoint", train.checkpoint, "Checkpoint written by fit")->required()->check(CLI::ExistingFile);
  t->add_option("--states", train.states, "FPCC/price series written by fit")->required()->check(CLI::ExistingFile);
  t->add_option("--hidden", train.shape.hidden_dim, "Hidden width");
  t->add_option("--lag", train.shape.lag, "Conditioning lags");
  t->add_option("--stage1", train.train.stage1_iters, "Stage 1 iterations");
  t->add_option("--stage2", train.train.stage2_iters, "Stage 2 iterations");
  t->add_option("--stage3", train.train.stage3_iters, "Stage 3 iterations");
  t->add_option("--alpha", train.train.alpha, "PIT weight in stage 2");
  t->add_option("--alpha-prime", train.train.alpha_prime, "PIT weight in stage 3");
  t->add_flag("--quiet", train.quiet, "No progress output");

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Simulate and decode scenarios");
  add_common(g, common);
  g->add_option("--checkpoint", gen.checkpoint, "Trained checkpoint")->required()->check(CLI::ExistingFile);
  g->add_option("--states", gen.states, "Series whose last rows condition the paths")->required()->check(CLI::ExistingFile);
  g->add_option("--scenarios", gen.n_scenarios, "Number of scenarios");
  g->add_option("--steps", gen.n_steps, "Steps per scenario");
  g->add_option("--format", gen.format, "csv or binary")->check(CLI::IsMember({"csv", "binary"}));

  ArbArgs arb;
  auto* a = app.add_subcommand("arb", "Static arbitrage tables");
  add_common(a, common);
  a->add_option("--iv", arb.iv, "Observed IV quotes CSV")->required()->check(CLI::ExistingFile);
  a->add_option("--prices", arb.prices, "Observed close prices CSV")->required()->check(CLI::ExistingFile);
  a->add_option("--scenarios", arb.scenarios, "Decoded scenarios (.csv or .bin)")->check(CLI::ExistingFile);
  a->add_option("--window", arb.window, "Days per negative-day count on the observed panel");

  HedgeArgs hedge;
  auto* h = app.add_subcommand("hedge", "Delta-hedging P&L along generated scenarios");
  add_common(h, common);
  h->add_option("--checkpoint", hedge.checkpoint, "Trained checkpoint")->required()->check(CLI::ExistingFile);
  h->add_option("--paths", hedge.paths, "paths.bin written by generate")->required()->check(CLI::ExistingFile);
  h->add_option("--expiry", hedge.expiry, "Option expiry in days");

  DiagnoseArgs diag;
  auto* d = app.add_subcommand("diagnose", "PIT and correlation diagnostics");
  add_common(d, common);
  d->add_option("--checkpoint", diag.checkpoint, "Trained checkpoint")->required()->check(CLI::ExistingFile);
  d->add_option("--states", diag.states, "FPCC/price series")->required()->check(CLI::ExistingFile);
  d->add_option("--paths", diag.paths, "paths.bin written by generate")->check(CLI::ExistingFile);
  d->add_option("--max-lag", diag.options.max_lag, "ACF lags");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error kind=usage command=" << active << " message=\"" << e.what() << "\"\n";
    return 1;
  }

  try {
    if (*s) {
      active = "synth";
      synth.mode = synth_mode == "flat" ? SynthMode::flat : SynthMode::smile;
      cmd_synth(common, synth);
    } else if (*f) {
      active = "fit";
      cmd_fit(common, fit);
    } else if (*t) {
      active = "train";
      cmd_train(common, train);
    } else if (*g) {
      active = "generate";
      cmd_generate(common, gen);
    } else if (*a) {
      active = "arb";
      cmd_arb(common, arb);
    } else if (*h) {
      active = "hedge";
      cmd_hedge(common, hedge);
    } else if (*d) {
      active = "diagnose";
      cmd_diagnose(common, diag);
    }
  } catch (const Error& e) {
    std::cerr << "error kind=" << to_string(e.kind()) << " command=" << active << " message=\"" << e.what() << "\"\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error kind=internal command=" << active << " message=\"" << e.what() << "\"\n";
    return 2;
  }
  return 0;
}
