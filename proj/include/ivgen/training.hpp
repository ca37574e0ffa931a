#pragma once

#include "ivgen/common.hpp"
#include "ivgen/nsde.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

namespace ivgen {

struct TrainConfig {
  int stage1_iters = 5000;
  int stage2_iters = 2000;
  int stage3_iters = 2000;
  double alpha = 1.0;
  double alpha_prime = 100.0;
  double learning_rate = 1e-3;
  double weight_decay = 1e-4;
  std::optional<double> drift_weight_decay;  // overrides weight_decay for the drift network
  bool full_batch = true;
  std::uint64_t seed = 0;
  int quadrature_points = 1001;

  double drift_decay() const { return drift_weight_decay.value_or(weight_decay); }
  void validate() const;
};

nlohmann::json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

/// Probability integral transforms, one row per predicted step.
struct PitSeries {
  Matrix u;  // (T - L) x D, clamped to [1e-12, 1 - 1e-12]
};

constexpr double pit_clamp = 1e-12;

/// Gaussian KDE penalty sum_i int_0^1 (rho_i(u) - 1)^2 du with boundary
/// reflection, bandwidth 0.1 * 0.9 * min(sd, IQR/1.34) * n^(-1/5) (floored at
/// 1e-4) and trapezoid quadrature on a uniform grid.
double pit_penalty(const Matrix& u, int quadrature_points = 1001, Matrix* d_u = nullptr);

/// Bandwidth used by pit_penalty for one feature.
double pit_bandwidth(std::span<const double> samples);

/// Everything the three losses need, evaluated on one normalized series.
struct LossValues {
  double mse = 0.0;
  double nll = 0.0;
  double pit = 0.0;
};

enum class LossKind { mse, nll_pit };

struct LossGradient {
  double value = 0.0;
  LossValues parts;
  Vector drift_grad;  // empty unless requested
  Vector diff_grad;
};

/// Differentiable loss evaluation on a normalized series (rows = dates).
/// `alpha` weights the PIT penalty for nll_pit.
class SeriesObjective {
 public:
  SeriesObjective(const Matrix& normalized_series, Eigen::Index lag, int quadrature_points = 1001);

  Eigen::Index n_targets() const { return targets_.rows(); }

  LossGradient evaluate(const NsdeModel& model, LossKind kind, double alpha, bool want_drift_grad,
                        bool want_diff_grad) const;

  /// Per-step conditional laws; mu is (N x D), sigma is a list of D x D.
  struct Conditionals {
    Matrix mu;
    std::vector<Matrix> sigma;
  };
  Conditionals conditionals(const NsdeModel& model) const;

  const Matrix& targets() const { return targets_; }

 private:
  std::vector<Matrix> steps_;  // lag positions, each D x N
  Matrix targets_;             // N x D
  Matrix previous_;            // N x D
  int quadrature_points_;
};

double mse_loss(const NsdeModel& model, const Matrix& raw_series);
PitSeries pit_sequence(const NsdeModel& model, const Matrix& raw_series);
double nll_pit_loss(const NsdeModel& model, const Matrix& raw_series, double alpha,
                    int quadrature_points = 1001);

/// Decoupled-weight-decay Adam.
class AdamW {
 public:
  explicit AdamW(Eigen::Index n, double learning_rate = 1e-3, double weight_decay = 1e-4,
                 double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8);
  void step(Vector& params, const Vector& grad);

 private:
  double lr_, wd_, beta1_, beta2_, epsilon_;
  Vector m_, v_;
  long t_ = 0;
};

struct TrainLogRow {
  int stage;
  int iteration;
  double loss;
  double mse;
  double nll;
  double pit_penalty;
};

struct TrainResult {
  NsdeModel model;
  std::vector<TrainLogRow> log;
  double stage2_final_objective = 0.0;  // stage-2 retained model under the stage-3 objective
  double stage3_best_objective = 0.0;
};

using TrainProgress = std::function<void(const TrainLogRow&)>;

/// Three-stage schedule: drift on MSE, then diffusion on NLL + alpha PIT with
/// the best drift frozen, then both on NLL + alpha' PIT. The minimum-loss
/// snapshot of each stage seeds the next; the stage-3 minimum is returned.
/// Sets the normalization statistics from `raw_series` first.
TrainResult train_three_stage(NsdeModel model, const Matrix& raw_series, const TrainConfig& config,
                              const TrainProgress& progress = {});

void write_train_log_csv(std::ostream& out, const std::vector<TrainLogRow>& log);

}  // namespace ivgen
