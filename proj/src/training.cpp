#include "ivgen/training.hpp"

#include "ivgen/stats.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numbers>
#include <numeric>
#include <ostream>

namespace ivgen {

void TrainConfig::validate() const {
  if (stage1_iters < 0 || stage2_iters < 0 || stage3_iters < 0) {
    fail(ErrorKind::usage, "iteration counts must be nonnegative");
  }
  if (!(alpha >= 0.0) || !(alpha_prime >= 0.0)) fail(ErrorKind::usage, "PIT weights must be nonnegative");
  if (!(learning_rate > 0.0) || !(weight_decay >= 0.0) || !(drift_decay() >= 0.0)) {
    fail(ErrorKind::usage, "learning rate must be positive and weight decay nonnegative");
  }
  if (quadrature_points < 2) fail(ErrorKind::usage, "quadrature_points must be at least 2");
  if (!full_batch) fail(ErrorKind::usage, "only full-sequence batches are supported");
}

nlohmann::json to_json(const TrainConfig& c) {
  nlohmann::json j = {{"stage1_iters", c.stage1_iters}, {"stage2_iters", c.stage2_iters},
          {"stage3_iters", c.stage3_iters}, {"alpha", c.alpha},
          {"alpha_prime", c.alpha_prime},   {"learning_rate", c.learning_rate},
          {"weight_decay", c.weight_decay}, {"batch", c.full_batch ? "full" : "mini"},
          {"seed", c.seed},                 {"quadrature_points", c.quadrature_points}};
  if (c.drift_weight_decay) j["drift_weight_decay"] = *c.drift_weight_decay;
  return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c) {
  try {
    auto opt = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    opt("stage1_iters", c.stage1_iters);
    opt("stage2_iters", c.stage2_iters);
    opt("stage3_iters", c.stage3_iters);
    opt("alpha", c.alpha);
    opt("alpha_prime", c.alpha_prime);
    opt("learning_rate", c.learning_rate);
    opt("weight_decay", c.weight_decay);
    if (j.contains("drift_weight_decay")) c.drift_weight_decay = j.at("drift_weight_decay").get<double>();
    opt("seed", c.seed);
    opt("quadrature_points", c.quadrature_points);
    if (j.contains("batch")) c.full_batch = j.at("batch").get<std::string>() == "full";
  } catch (const nlohmann::json::exception& ex) {
    fail(ErrorKind::usage, std::string("train config: ") + ex.what());
  }
  return c;
}

// ---------------------------------------------------------------------------
// PIT penalty

namespace {

constexpr double kernel_cutoff = 8.0;  // standard deviations
constexpr double bandwidth_floor = 1e-4;

struct Bandwidth {
  double h = bandwidth_floor;
  bool floored = true;
  bool uses_sd = true;
  double kappa = 0.0;  // h = kappa * spread when not floored
  double mean = 0.0;
  double sd = 0.0;
  // type-7 quantile interpolation of the IQR: (sorted index, weight) pairs
  std::array<std::pair<std::size_t, double>, 4> iqr_terms{};
  std::vector<std::size_t> order;
};

Bandwidth silverman_tenth(std::span<const double> u) {
  Bandwidth bw;
  const std::size_t n = u.size();
  const double nd = static_cast<double>(n);
  bw.mean = std::accumulate(u.begin(), u.end(), 0.0) / nd;
  double ss = 0.0;
  for (double x : u) ss += (x - bw.mean) * (x - bw.mean);
  bw.sd = n > 1 ? std::sqrt(ss / (nd - 1.0)) : 0.0;

  bw.order.resize(n);
  std::iota(bw.order.begin(), bw.order.end(), std::size_t{0});
  std::stable_sort(bw.order.begin(), bw.order.end(), [&](std::size_t a, std::size_t b) { return u[a] < u[b]; });
  auto interp = [&](double p, double sign, std::size_t slot) {
    const double hpos = (nd - 1.0) * p;
    const auto lo = static_cast<std::size_t>(std::floor(hpos));
    const auto hi = std::min(lo + 1, n - 1);
    const double frac = hpos - static_cast<double>(lo);
    bw.iqr_terms[slot] = {lo, sign * (1.0 - frac)};
    bw.iqr_terms[slot + 1] = {hi, sign * frac};
    return u[bw.order[lo]] + frac * (u[bw.order[hi]] - u[bw.order[lo]]);
  };
  const double q75 = interp(0.75, 1.0, 0);
  const double q25 = interp(0.25, -1.0, 2);
  const double iqr_scaled = (q75 - q25) / 1.34;

  bw.uses_sd = bw.sd <= iqr_scaled;
  const double spread = bw.uses_sd ? bw.sd : iqr_scaled;
  bw.kappa = 0.1 * 0.9 * std::pow(nd, -0.2);
  const double h = bw.kappa * spread;
  if (h > bandwidth_floor) {
    bw.h = h;
    bw.floored = false;
  }
  return bw;
}

}  // namespace

double pit_bandwidth(std::span<const double> samples) {
  if (samples.empty()) fail(ErrorKind::domain, "bandwidth of an empty sample");
  return silverman_tenth(samples).h;
}

double pit_penalty(const Matrix& u, int quadrature_points, Matrix* d_u) {
  if (u.rows() == 0 || u.cols() == 0) fail(ErrorKind::domain, "PIT penalty of an empty series");
  if (quadrature_points < 2) fail(ErrorKind::domain, "need at least two quadrature points");
  const Eigen::Index n = u.rows();
  const auto q = static_cast<Eigen::Index>(quadrature_points);
  const double step = 1.0 / static_cast<double>(q - 1);
  const double nd = static_cast<double>(n);
  if (d_u) d_u->setZero(u.rows(), u.cols());

  Vector weights = Vector::Constant(q, step);
  weights(0) = weights(q - 1) = 0.5 * step;

  double total = 0.0;
  std::vector<double> samples(static_cast<std::size_t>(n));
  Vector rho(q);
  Vector lambda(q);
  for (Eigen::Index j = 0; j < u.cols(); ++j) {
    for (Eigen::Index t = 0; t < n; ++t) samples[static_cast<std::size_t>(t)] = u(t, j);
    const Bandwidth bw = silverman_tenth(samples);
    const double h = bw.h;
    const double reach = kernel_cutoff * h;
    const double norm = 1.0 / (nd * h);

    // Each sample contributes at itself and at its mirror images about 0 and 1.
    auto for_each_center = [&](auto&& visit) {
      for (Eigen::Index t = 0; t < n; ++t) {
        const double x = u(t, j);
        const double centers[3] = {x, -x, 2.0 - x};
        const double signs[3] = {1.0, -1.0, -1.0};
        for (int c = 0; c < 3; ++c) {
          const double center = centers[c];
          const auto k0 = std::max<Eigen::Index>(0, static_cast<Eigen::Index>(std::ceil((center - reach) / step)));
          const auto k1 = std::min<Eigen::Index>(q - 1, static_cast<Eigen::Index>(std::floor((center + reach) / step)));
          for (Eigen::Index k = k0; k <= k1; ++k) {
            visit(t, signs[c], k, (static_cast<double>(k) * step - center) / h);
          }
        }
      }
    };

    rho.setZero();
    for_each_center([&](Eigen::Index, double, Eigen::Index k, double v) { rho(k) += normal_pdf(v); });
    rho *= norm;
    total += (weights.array() * (rho.array() - 1.0).square()).sum();

    if (!d_u) continue;
    lambda = 2.0 * weights.array() * (rho.array() - 1.0);
    double d_h = 0.0;
    for_each_center([&](Eigen::Index t, double sign, Eigen::Index k, double v) {
      const double pdf = normal_pdf(v);
      (*d_u)(t, j) += sign * lambda(k) * norm * v * pdf / h;
      d_h += lambda(k) * pdf * (v * v - 1.0) / (nd * h * h);
    });
    if (bw.floored) continue;
    if (bw.uses_sd) {
      if (bw.sd > 0.0) {
        for (Eigen::Index t = 0; t < n; ++t) {
          (*d_u)(t, j) += d_h * bw.kappa * (u(t, j) - bw.mean) / ((nd - 1.0) * bw.sd);
        }
      }
    } else {
      for (const auto& [pos, w] : bw.iqr_terms) {
        (*d_u)(static_cast<Eigen::Index>(bw.order[pos]), j) += d_h * bw.kappa * w / 1.34;
      }
    }
  }
  return total;
}

// ---------------------------------------------------------------------------
// Losses

SeriesObjective::SeriesObjective(const Matrix& series, Eigen::Index lag, int quadrature_points)
    : quadrature_points_(quadrature_points) {
  if (lag < 1) fail(ErrorKind::domain, "lag must be at least 1");
  if (series.rows() <= lag + 1) {
    fail(ErrorKind::shape, "series of length " + std::to_string(series.rows()) +
                               " is too short for lag " + std::to_string(lag));
  }
  const Eigen::Index n = series.rows() - lag;
  steps_.reserve(static_cast<std::size_t>(lag));
  for (Eigen::Index s = 0; s < lag; ++s) steps_.push_back(series.middleRows(s, n).transpose());
  targets_ = series.bottomRows(n);
  previous_ = series.middleRows(lag - 1, n);
}

namespace {

struct StepDerivatives {
  Matrix d_nu;     // D x N
  Matrix d_lflat;  // P x N
};

}  // namespace

LossGradient SeriesObjective::evaluate(const NsdeModel& model, LossKind kind, double alpha,
                                       bool want_drift_grad, bool want_diff_grad) const {
  const Eigen::Index d = targets_.cols();
  const Eigen::Index n = targets_.rows();
  if (model.state_dim() != d) fail(ErrorKind::shape, "model and series dimensions differ");
  if (model.lag != static_cast<Eigen::Index>(steps_.size())) fail(ErrorKind::shape, "model lag differs from objective lag");
  const double dt = model.dt;
  const double nd = static_cast<double>(n);

  RecurrentTape drift_tape;
  RecurrentTape diff_tape;
  const Matrix nu = recurrent_forward_batch(model.drift_net, steps_, want_drift_grad ? &drift_tape : nullptr);
  const Matrix lflat = recurrent_forward_batch(model.diff_net, steps_, want_diff_grad ? &diff_tape : nullptr);

  LossGradient out;
  const Matrix residual = targets_ - previous_ - nu.transpose() * dt;  // N x D
  out.parts.mse = residual.squaredNorm() / nd;

  const bool nll_grads = kind == LossKind::nll_pit && (want_drift_grad || want_diff_grad);
  StepDerivatives der;
  der.d_nu = Matrix::Zero(d, n);
  der.d_lflat = Matrix::Zero(lflat.rows(), n);

  Matrix pit(n, d);
  Matrix z_scores(n, d);
  Matrix sigma_diag(n, d);
  const double log2pi = std::log(2.0 * std::numbers::pi);
  double nll = 0.0;
  const Matrix identity = Matrix::Identity(d, d);
  for (Eigen::Index t = 0; t < n; ++t) {
    const Matrix l = unpack_tril(lflat.col(t), d);
    const Matrix sigma = (l * l.transpose() + model.eps * identity) * dt;
    const Vector r = (targets_.row(t) - previous_.row(t)).transpose() - nu.col(t) * dt;
    const Eigen::LLT<Matrix> llt(sigma);
    if (llt.info() != Eigen::Success) fail(ErrorKind::numerical, "conditional covariance lost definiteness");
    const Vector white = llt.matrixL().solve(r);
    const double log_det = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    nll += 0.5 * (static_cast<double>(d) * log2pi + log_det + white.squaredNorm());

    for (Eigen::Index i = 0; i < d; ++i) {
      sigma_diag(t, i) = sigma(i, i);
      const double z = r(i) / std::sqrt(sigma(i, i));
      z_scores(t, i) = z;
      pit(t, i) = std::clamp(normal_cdf(z), pit_clamp, 1.0 - pit_clamp);
    }

    if (nll_grads) {
      const Matrix inv = llt.solve(identity);
      const Vector a = inv * r;
      const Matrix g = 0.5 * (inv - a * a.transpose());
      der.d_nu.col(t) = -a * dt;
      const Matrix d_l = 2.0 * dt * g * l;
      der.d_lflat.col(t) = pack_tril(d_l);
    }
  }
  out.parts.nll = nll;

  Matrix d_pit;
  out.parts.pit = pit_penalty(pit, quadrature_points_, nll_grads && alpha != 0.0 ? &d_pit : nullptr);

  if (kind == LossKind::mse) {
    out.value = out.parts.mse;
    if (want_drift_grad) {
      const Matrix d_nu = (-2.0 * dt / nd) * residual.transpose();
      out.drift_grad = recurrent_backward(model.drift_net, drift_tape, d_nu);
    }
    if (want_diff_grad) out.diff_grad = Vector::Zero(model.diff_net.n_params());
    return out;
  }

  out.value = out.parts.nll + alpha * out.parts.pit;
  if (nll_grads && alpha != 0.0) {
    for (Eigen::Index t = 0; t < n; ++t) {
      const Matrix l = unpack_tril(lflat.col(t), d);
      for (Eigen::Index i = 0; i < d; ++i) {
        const double u = normal_cdf(z_scores(t, i));
        if (u < pit_clamp || u > 1.0 - pit_clamp) continue;
        const double z = z_scores(t, i);
        const double g = alpha * d_pit(t, i) * normal_pdf(z);
        const double s = std::sqrt(sigma_diag(t, i));
        // U = Phi((b - mu)/s): dU/dmu = -phi/s, dU/dSigma_ii = -phi z / (2 Sigma_ii)
        der.d_nu(i, t) += -g / s * dt;
        const double d_sigma_ii = -g * z / (2.0 * sigma_diag(t, i));
        for (Eigen::Index k = 0; k <= i; ++k) {
          der.d_lflat(tril_index(i, k), t) += d_sigma_ii * 2.0 * dt * l(i, k);
        }
      }
    }
  }
  if (want_drift_grad) out.drift_grad = recurrent_backward(model.drift_net, drift_tape, der.d_nu);
  if (want_diff_grad) out.diff_grad = recurrent_backward(model.diff_net, diff_tape, der.d_lflat);
  return out;
}

SeriesObjective::Conditionals SeriesObjective::conditionals(const NsdeModel& model) const {
  const Eigen::Index d = targets_.cols();
  const Eigen::Index n = targets_.rows();
  const Matrix nu = recurrent_forward_batch(model.drift_net, steps_);
  const Matrix lflat = recurrent_forward_batch(model.diff_net, steps_);
  Conditionals out;
  out.mu = previous_ + nu.transpose() * model.dt;
  out.sigma.reserve(static_cast<std::size_t>(n));
  for (Eigen::Index t = 0; t < n; ++t) {
    const Matrix l = unpack_tril(lflat.col(t), d);
    out.sigma.push_back((l * l.transpose() + model.eps * Matrix::Identity(d, d)) * model.dt);
  }
  return out;
}

double mse_loss(const NsdeModel& model, const Matrix& raw_series) {
  const SeriesObjective obj(model.normalize(raw_series), model.lag);
  return obj.evaluate(model, LossKind::mse, 0.0, false, false).value;
}

PitSeries pit_sequence(const NsdeModel& model, const Matrix& raw_series) {
  const SeriesObjective obj(model.normalize(raw_series), model.lag);
  const auto cond = obj.conditionals(model);
  PitSeries out;
  out.u.resize(obj.n_targets(), model.state_dim());
  for (Eigen::Index t = 0; t < out.u.rows(); ++t) {
    for (Eigen::Index i = 0; i < out.u.cols(); ++i) {
      const double z = (obj.targets()(t, i) - cond.mu(t, i)) / std::sqrt(cond.sigma[static_cast<std::size_t>(t)](i, i));
      out.u(t, i) = std::clamp(normal_cdf(z), pit_clamp, 1.0 - pit_clamp);
    }
  }
  return out;
}

double nll_pit_loss(const NsdeModel& model, const Matrix& raw_series, double alpha, int quadrature_points) {
  const SeriesObjective obj(model.normalize(raw_series), model.lag, quadrature_points);
  return obj.evaluate(model, LossKind::nll_pit, alpha, false, false).value;
}

// ---------------------------------------------------------------------------

AdamW::AdamW(Eigen::Index n, double learning_rate, double weight_decay, double beta1, double beta2,
             double epsilon)
    : lr_(learning_rate), wd_(weight_decay), beta1_(beta1), beta2_(beta2), epsilon_(epsilon),
      m_(Vector::Zero(n)), v_(Vector::Zero(n)) {}

void AdamW::step(Vector& params, const Vector& grad) {
  if (grad.size() != params.size() || params.size() != m_.size()) {
    fail(ErrorKind::shape, "AdamW: parameter/gradient size mismatch");
  }
  ++t_;
  params *= 1.0 - lr_ * wd_;
  m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
  v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  params.array() -= lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + epsilon_);
}

TrainResult train_three_stage(NsdeModel model, const Matrix& raw_series, const TrainConfig& config,
                              const TrainProgress& progress) {
  config.validate();
  model.validate();
  if (raw_series.cols() != model.state_dim()) fail(ErrorKind::shape, "series dimension differs from model state");
  set_normalization(model, raw_series);
  const SeriesObjective objective(model.normalize(raw_series), model.lag, config.quadrature_points);

  TrainResult result;
  auto record = [&](int stage, int it, const LossGradient& lg) {
    if (!std::isfinite(lg.value)) {
      fail(ErrorKind::numerical, "training diverged: stage " + std::to_string(stage) + " iteration " +
                                     std::to_string(it) + " produced a non-finite loss");
    }
    TrainLogRow row{stage, it, lg.value, lg.parts.mse, lg.parts.nll, lg.parts.pit};
    result.log.push_back(row);
    if (progress) progress(row);
  };

  // Stage 1: drift on MSE.
  {
    AdamW opt(model.drift_net.n_params(), config.learning_rate, config.drift_decay());
    double best = std::numeric_limits<double>::infinity();
    Vector best_params = model.drift_net.params();
    for (int it = 0; it < config.stage1_iters; ++it) {
      const auto lg = objective.evaluate(model, LossKind::mse, 0.0, true, false);
      record(1, it, lg);
      if (lg.value < best) {
        best = lg.value;
        best_params = model.drift_net.params();
      }
      opt.step(model.drift_net.params(), lg.drift_grad);
    }
    model.drift_net.params() = best_params;
  }

  // Stage 2: diffusion on NLL + alpha PIT, drift frozen.
  {
    AdamW opt(model.diff_net.n_params(), config.learning_rate, config.weight_decay);
    double best = std::numeric_limits<double>::infinity();
    Vector best_params = model.diff_net.params();
    for (int it = 0; it < config.stage2_iters; ++it) {
      const auto lg = objective.evaluate(model, LossKind::nll_pit, config.alpha, false, true);
      record(2, it, lg);
      if (lg.value < best) {
        best = lg.value;
        best_params = model.diff_net.params();
      }
      opt.step(model.diff_net.params(), lg.diff_grad);
    }
    model.diff_net.params() = best_params;
  }

  // Stage 3: both networks on NLL + alpha' PIT.
  {
    result.stage2_final_objective =
        objective.evaluate(model, LossKind::nll_pit, config.alpha_prime, false, false).value;
    result.stage3_best_objective = result.stage2_final_objective;
    AdamW drift_opt(model.drift_net.n_params(), config.learning_rate, config.drift_decay());
    AdamW diff_opt(model.diff_net.n_params(), config.learning_rate, config.weight_decay);
    double best = std::numeric_limits<double>::infinity();
    Vector best_drift = model.drift_net.params();
    Vector best_diff = model.diff_net.params();
    for (int it = 0; it < config.stage3_iters; ++it) {
      const auto lg = objective.evaluate(model, LossKind::nll_pit, config.alpha_prime, true, true);
      record(3, it, lg);
      if (lg.value < best) {
        best = lg.value;
        best_drift = model.drift_net.params();
        best_diff = model.diff_net.params();
      }
      drift_opt.step(model.drift_net.params(), lg.drift_grad);
      diff_opt.step(model.diff_net.params(), lg.diff_grad);
    }
    if (config.stage3_iters > 0) {
      model.drift_net.params() = best_drift;
      model.diff_net.params() = best_diff;
      result.stage3_best_objective = best;
    }
  }
  result.model = std::move(model);
  return result;
}

void write_train_log_csv(std::ostream& out, const std::vector<TrainLogRow>& log) {
  out << "stage,iteration,loss,mse,nll,pit_penalty\n" << std::setprecision(17);
  for (const auto& r : log) {
    out << r.stage << ',' << r.iteration << ',' << r.loss << ',' << r.mse << ',' << r.nll << ','
        << r.pit_penalty << '\n';
  }
}

}  // namespace ivgen
