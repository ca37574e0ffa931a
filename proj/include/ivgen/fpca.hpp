#pragma once

#include "ivgen/basis.hpp"
#include "ivgen/common.hpp"
#include "ivgen/market_data.hpp"

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace ivgen {

/// Functional principal components expressed in the orthonormal basis. Row m
/// of `components` holds the basis coefficients of eigenfunction m, so
/// psi_m = sum_k components(m, k) phi_k. Component indices are 0-based.
struct FpcaModel {
  BasisSet basis;
  Vector mean_coeffs;     // B
  Matrix components;      // M x B
  Vector eigenvalues;     // M, nonincreasing
  Vector all_eigenvalues; // B, nonincreasing, clamped at zero
  Vector explained;       // B, cumulative variance shares

  Eigen::Index n_components() const { return components.rows(); }

  double mean_surface(double x, double y) const;
  double eval_component(Eigen::Index m, double x, double y) const;
};

/// Pooled FPCA over every (date, equity) coefficient vector. The retained
/// count is the smallest M whose cumulative explained variance reaches
/// `threshold`.
FpcaModel fit_fpca(std::span<const SurfaceCoefficients> coeffs, double threshold = 0.995);
FpcaModel fit_fpca(const Matrix& coefficient_rows, const BasisSet& basis, double threshold = 0.995);

double eval_fpc(const FpcaModel& model, Eigen::Index m, double x, double y);

/// Least-squares FPC coefficients of one day's transformed quotes, after
/// removing the mean surface.
Vector project_to_fpcc(const FpcaModel& model, std::span<const Quote> quotes,
                       double* rmse = nullptr);

template <typename Derived>
double reconstruct_surface(const FpcaModel& model, const Eigen::MatrixBase<Derived>& b, double x,
                           double y) {
  if (b.size() != model.n_components()) {
    fail(ErrorKind::shape, "FPCC vector has length " + std::to_string(b.size()) + ", model has " +
                               std::to_string(model.n_components()) + " components");
  }
  const Vector row = model.basis.row<double>(x, y);
  return row.dot(model.mean_coeffs) + (model.components * row).dot(b);
}

/// Per-date concatenated model state: for each equity its M FPCCs, followed
/// by the transformed detrended price of every equity.
struct FpccSeries {
  std::vector<std::string> dates;
  std::vector<std::string> equities;
  Eigen::Index n_components = 0;
  Matrix states;       // T x (M*E + E)
  Matrix fit_rmse;     // T x E, residual of the FPC projection

  Eigen::Index state_dim() const { return states.cols(); }
  Eigen::Index fpcc_column(std::size_t equity, Eigen::Index m) const {
    return static_cast<Eigen::Index>(equity) * n_components + m;
  }
  Eigen::Index price_column(std::size_t equity) const {
    return n_components * static_cast<Eigen::Index>(equities.size()) +
           static_cast<Eigen::Index>(equity);
  }
};

FpccSeries build_fpcc_series(const FpcaModel& model, const PanelDataset& transformed);

void write_states_csv(std::ostream& out, const FpccSeries& series);
FpccSeries read_states_csv(std::istream& in);

nlohmann::json to_json(const FpcaModel& model);

}  // namespace ivgen
