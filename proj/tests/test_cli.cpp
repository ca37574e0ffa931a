#include <doctest.h>

#include "cli_runner.hpp"

using cli::run;
using cli::slurp;

TEST_CASE("usage errors exit with 1") {
  const auto dir = cli::fresh_dir("ivgen_cli_usage");
  CHECK(run("", dir).code == 1);
  CHECK(run("frobnicate", dir).code == 1);
  CHECK(run("synth --threads 0", dir).code == 1);
  CHECK(run("generate --out " + dir.string(), dir).code == 1);
  cli::write_text(dir / "bad.json", "{not json");
  const auto bad = run("synth --config " + (dir / "bad.json").string() + " --out " + dir.string(), dir);
  CHECK(bad.code == 1);
  CHECK(bad.err.rfind("error kind=usage command=synth message=", 0) == 0);
}

TEST_CASE("synth is deterministic") {
  const auto a = cli::fresh_dir("ivgen_cli_synth_a");
  const auto b = cli::fresh_dir("ivgen_cli_synth_b");
  cli::write_text(a / "cfg.json", R"({"n_dates": 40})");
  REQUIRE(run("synth --seed 7 --config " + (a / "cfg.json").string() + " --out " + a.string(), a).code == 0);
  REQUIRE(run("synth --seed 7 --config " + (a / "cfg.json").string() + " --out " + b.string(), b).code == 0);
  CHECK(slurp(a / "iv.csv") == slurp(b / "iv.csv"));
  CHECK(slurp(a / "prices.csv") == slurp(b / "prices.csv"));
  CHECK(slurp(a / "iv.csv").size() > 1000);
}

TEST_CASE("too few quotes per surface is a data error") {
  const auto dir = cli::fresh_dir("ivgen_cli_sparse");
  cli::write_text(dir / "cfg.json", R"({"n_dates": 30, "deltas": [0.1, 0.3, 0.5, 0.7, 0.9], "taus": [0.1, 0.5]})");
  REQUIRE(run("synth --config " + (dir / "cfg.json").string() + " --out " + dir.string(), dir).code == 0);
  const auto fit = run("fit --iv " + (dir / "iv.csv").string() + " --prices " + (dir / "prices.csv").string() +
                           " --out " + dir.string(),
                       dir);
  CHECK(fit.code == 2);
  CHECK(fit.err.rfind("error kind=ill_posed command=fit", 0) == 0);
  CHECK(fit.err.find("15 quotes") != std::string::npos);
  CHECK(run("fit --iv /nonexistent.csv --prices /nonexistent.csv", dir).code == 1);
}

TEST_CASE("pipeline stages chain and divergence exits with 3") {
  const auto dir = cli::fresh_dir("ivgen_cli_pipeline");
  const std::string d = dir.string();
  cli::write_text(dir / "synth.json", R"({"n_dates": 80})");
  cli::write_text(dir / "train.json", R"({"stage1_iters": 200, "stage2_iters": 50, "stage3_iters": 50, "hidden_dim": 6, "quadrature_points": 201})");
  REQUIRE(run("synth --seed 3 --config " + d + "/synth.json --out " + d, dir).code == 0);
  REQUIRE(run("fit --iv " + d + "/iv.csv --prices " + d + "/prices.csv --out " + d, dir).code == 0);
  // A partial checkpoint cannot generate.
  CHECK(run("generate --checkpoint " + d + "/model.ivgn --states " + d + "/states.csv --out " + d, dir).code == 1);
  REQUIRE(run("train --quiet --config " + d + "/train.json --checkpoint " + d + "/model.ivgn --states " + d +
                  "/states.csv --out " + d,
              dir)
              .code == 0);
  REQUIRE(run("generate --scenarios 20 --steps 30 --format binary --checkpoint " + d + "/model.ivgn --states " + d +
                  "/states.csv --out " + d,
              dir)
              .code == 0);
  CHECK(run("arb --iv " + d + "/iv.csv --prices " + d + "/prices.csv --scenarios " + d + "/scenarios.bin --out " + d, dir)
            .code == 0);
  CHECK(run("hedge --checkpoint " + d + "/model.ivgn --paths " + d + "/paths.bin --out " + d, dir).code == 0);
  CHECK(run("diagnose --checkpoint " + d + "/model.ivgn --states " + d + "/states.csv --paths " + d + "/paths.bin --out " + d,
            dir)
            .code == 0);
  for (const char* f : {"arbitrage.csv", "pnl.csv", "pnl_quantiles.csv", "diagnostics.json", "train_log.csv"}) {
    CHECK(std::filesystem::file_size(dir / f) > 0);
  }

  cli::write_text(dir / "diverge.json", R"({"stage1_iters": 5, "stage2_iters": 2, "stage3_iters": 2, "hidden_dim": 4, "learning_rate": 1e300})");
  const auto div = run("train --quiet --config " + d + "/diverge.json --checkpoint " + d + "/model.ivgn --states " + d +
                           "/states.csv --out " + d + "/div",
                       dir);
  CHECK(div.code == 3);
  CHECK(div.err.rfind("error kind=numerical command=train", 0) == 0);
}
