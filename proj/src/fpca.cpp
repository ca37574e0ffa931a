#include "ivgen/fpca.hpp"

#include <Eigen/Eigenvalues>

#include <charconv>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>

namespace ivgen {

double FpcaModel::mean_surface(double x, double y) const {
  return eval_surface(mean_coeffs, basis, x, y);
}

double FpcaModel::eval_component(Eigen::Index m, double x, double y) const {
  if (m < 0 || m >= n_components()) {
    fail(ErrorKind::domain, "component index " + std::to_string(m) + " outside [0," +
                                std::to_string(n_components() - 1) + "]");
  }
  return components.row(m).dot(basis.row<double>(x, y));
}

double eval_fpc(const FpcaModel& model, Eigen::Index m, double x, double y) {
  return model.eval_component(m, x, y);
}

FpcaModel fit_fpca(const Matrix& rows, const BasisSet& basis, double threshold) {
  if (!(threshold > 0.0 && threshold <= 1.0)) {
    fail(ErrorKind::domain, "explained-variance threshold must lie in (0,1]");
  }
  if (rows.cols() != basis.size()) fail(ErrorKind::shape, "coefficient rows do not match basis size");
  if (rows.rows() <= basis.size()) {
    fail(ErrorKind::ill_posed, "FPCA needs more than " + std::to_string(basis.size()) +
                                   " pooled surfaces, got " + std::to_string(rows.rows()));
  }
  FpcaModel model;
  model.basis = basis;
  model.mean_coeffs = rows.colwise().mean().transpose();
  const Matrix centered = rows.rowwise() - model.mean_coeffs.transpose();
  const Matrix cov = (centered.transpose() * centered) / static_cast<double>(rows.rows());

  const Eigen::SelfAdjointEigenSolver<Matrix> solver(cov);
  if (solver.info() != Eigen::Success) fail(ErrorKind::numerical, "FPCA eigensolver did not converge");

  const Eigen::Index b = basis.size();
  Vector values = solver.eigenvalues().reverse();
  Matrix vectors = solver.eigenvectors().rowwise().reverse();  // columns, descending
  values = values.cwiseMax(0.0);
  const double total = values.sum();
  if (!(total > 0.0)) fail(ErrorKind::ill_posed, "FPCA: coefficient panel has zero variance");

  model.all_eigenvalues = values;
  model.explained.resize(b);
  double running = 0.0;
  Eigen::Index retained = b;
  for (Eigen::Index k = 0; k < b; ++k) {
    running += values(k);
    model.explained(k) = running / total;
    if (retained == b && model.explained(k) >= threshold - 1e-12) retained = k + 1;
  }

  model.components.resize(retained, b);
  for (Eigen::Index m = 0; m < retained; ++m) {
    Vector c = vectors.col(m);
    Eigen::Index arg = 0;
    c.cwiseAbs().maxCoeff(&arg);
    if (c(arg) < 0.0) c = -c;
    model.components.row(m) = c.transpose();
  }
  model.eigenvalues = values.head(retained);
  return model;
}

FpcaModel fit_fpca(std::span<const SurfaceCoefficients> coeffs, double threshold) {
  if (coeffs.empty()) fail(ErrorKind::ill_posed, "FPCA needs at least one surface");
  const Eigen::Index b = coeffs.front().a.size();
  int order = 0;
  while (basis_size(order) < b) ++order;
  if (basis_size(order) != b) fail(ErrorKind::shape, "coefficient length is not a basis size");
  Matrix rows(static_cast<Eigen::Index>(coeffs.size()), b);
  for (std::size_t i = 0; i < coeffs.size(); ++i) {
    if (coeffs[i].a.size() != b) fail(ErrorKind::shape, "ragged coefficient panel");
    rows.row(static_cast<Eigen::Index>(i)) = coeffs[i].a.transpose();
  }
  return fit_fpca(rows, enumerate_basis(order), threshold);
}

Vector project_to_fpcc(const FpcaModel& model, std::span<const Quote> quotes, double* rmse) {
  const auto n = static_cast<Eigen::Index>(quotes.size());
  const Eigen::Index m = model.n_components();
  if (n <= m) {
    fail(ErrorKind::ill_posed, "FPC projection needs more than " + std::to_string(m) + " quotes");
  }
  Matrix psi(n, m);
  Vector residual(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& q = quotes[static_cast<std::size_t>(i)];
    const Vector row = model.basis.row<double>(q.tau, q.delta);
    psi.row(i) = (model.components * row).transpose();
    residual(i) = q.iv - row.dot(model.mean_coeffs);
  }
  const auto fit = solve_least_squares(psi, residual, "FPC projection");
  if (rmse) *rmse = fit.rmse;
  return fit.solution;
}

FpccSeries build_fpcc_series(const FpcaModel& model, const PanelDataset& panel) {
  if (panel.coords != Coordinates::transformed) {
    fail(ErrorKind::domain, "FPCC series expects a transformed panel");
  }
  FpccSeries series;
  series.dates = panel.dates;
  series.equities = panel.equities;
  series.n_components = model.n_components();
  const auto t = static_cast<Eigen::Index>(panel.n_dates());
  const auto e = static_cast<Eigen::Index>(panel.n_equities());
  series.states.resize(t, series.n_components * e + e);
  series.fit_rmse.resize(t, e);
  for (Eigen::Index d = 0; d < t; ++d) {
    for (Eigen::Index q = 0; q < e; ++q) {
      const auto& cell = panel.cell(static_cast<std::size_t>(d), static_cast<std::size_t>(q));
      double rmse = 0.0;
      const Vector b = project_to_fpcc(model, cell.quotes, &rmse);
      series.states.row(d).segment(q * series.n_components, series.n_components) = b.transpose();
      series.states(d, series.price_column(static_cast<std::size_t>(q))) = cell.price;
      series.fit_rmse(d, q) = rmse;
    }
  }
  return series;
}

void write_states_csv(std::ostream& out, const FpccSeries& series) {
  out << "date";
  for (std::size_t e = 0; e < series.equities.size(); ++e) {
    for (Eigen::Index m = 0; m < series.n_components; ++m) {
      out << ",fpcc_" << series.equities[e] << '_' << m;
    }
  }
  for (const auto& name : series.equities) out << ",price_" << name;
  out << '\n' << std::setprecision(17);
  for (Eigen::Index t = 0; t < series.states.rows(); ++t) {
    out << series.dates[static_cast<std::size_t>(t)];
    for (Eigen::Index j = 0; j < series.states.cols(); ++j) out << ',' << series.states(t, j);
    out << '\n';
  }
}

FpccSeries read_states_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) fail(ErrorKind::parse, "states: missing header");
  FpccSeries series;
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) header.push_back(field);
  }
  if (header.empty() || header[0] != "date") fail(ErrorKind::parse, "states: header must start with date");
  std::vector<std::string> fpcc_equities;
  Eigen::Index fpcc_cols = 0;
  for (std::size_t i = 1; i < header.size(); ++i) {
    const auto& h = header[i];
    if (h.rfind("price_", 0) == 0) {
      series.equities.push_back(h.substr(6));
    } else if (h.rfind("fpcc_", 0) == 0) {
      ++fpcc_cols;
    } else {
      fail(ErrorKind::parse, "states: unexpected column " + h);
    }
  }
  if (series.equities.empty() || fpcc_cols % static_cast<Eigen::Index>(series.equities.size()) != 0) {
    fail(ErrorKind::parse, "states: inconsistent column layout");
  }
  series.n_components = fpcc_cols / static_cast<Eigen::Index>(series.equities.size());
  const Eigen::Index d = static_cast<Eigen::Index>(header.size()) - 1;

  std::vector<std::vector<double>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    std::getline(ss, field, ',');
    series.dates.push_back(field);
    std::vector<double> row;
    while (std::getline(ss, field, ',')) {
      double v = 0.0;
      const auto [p, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
      if (ec != std::errc() || p != field.data() + field.size()) {
        fail(ErrorKind::parse, "states line " + std::to_string(line_no) + ": bad number");
      }
      row.push_back(v);
    }
    if (static_cast<Eigen::Index>(row.size()) != d) {
      fail(ErrorKind::parse, "states line " + std::to_string(line_no) + ": wrong field count");
    }
    rows.push_back(std::move(row));
  }
  series.states.resize(static_cast<Eigen::Index>(rows.size()), d);
  for (std::size_t t = 0; t < rows.size(); ++t) {
    for (Eigen::Index j = 0; j < d; ++j) series.states(static_cast<Eigen::Index>(t), j) = rows[t][static_cast<std::size_t>(j)];
  }
  series.fit_rmse = Matrix::Zero(series.states.rows(), static_cast<Eigen::Index>(series.equities.size()));
  return series;
}

nlohmann::json to_json(const FpcaModel& model) {
  auto vec = [](const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  std::vector<double> c;
  for (Eigen::Index m = 0; m < model.components.rows(); ++m) {
    for (Eigen::Index k = 0; k < model.components.cols(); ++k) c.push_back(model.components(m, k));
  }
  nlohmann::json order = nlohmann::json::array();
  for (const auto& [i, j] : model.basis.members) order.push_back({i, j});
  return {{"order_cap", model.basis.order_cap},
          {"basis_order", order},
          {"n_components", model.n_components()},
          {"mean_coeffs", vec(model.mean_coeffs)},
          {"components_row_major", c},
          {"eigenvalues", vec(model.eigenvalues)},
          {"all_eigenvalues", vec(model.all_eigenvalues)},
          {"explained", vec(model.explained)}};
}

}  // namespace ivgen
