#include "ivgen/basis.hpp"

#include <iomanip>
#include <ostream>

namespace ivgen {

double legendre_eval(int m, double x) { return legendre<double>(m, x); }

BasisSet enumerate_basis(int order_cap) {
  if (order_cap < 0) fail(ErrorKind::domain, "basis order cap must be nonnegative");
  BasisSet basis;
  basis.order_cap = order_cap;
  for (int degree = 0; degree <= order_cap; ++degree) {
    for (int i = 0; i <= degree; ++i) basis.members.emplace_back(i, degree - i);
  }
  return basis;
}

Matrix design_matrix(const BasisSet& basis, std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) fail(ErrorKind::shape, "design matrix node coordinates differ in length");
  Matrix phi(static_cast<Eigen::Index>(x.size()), basis.size());
  for (std::size_t n = 0; n < x.size(); ++n) {
    phi.row(static_cast<Eigen::Index>(n)) = basis.row<double>(x[n], y[n]).transpose();
  }
  return phi;
}

LeastSquaresFit solve_least_squares(const Matrix& design, const Vector& values,
                                    const std::string& context) {
  if (design.rows() != values.size()) fail(ErrorKind::shape, "least squares: row count mismatch");
  if (design.rows() < design.cols()) {
    fail(ErrorKind::ill_posed, context + ": " + std::to_string(design.rows()) +
                                   " observations for " + std::to_string(design.cols()) +
                                   " unknowns");
  }
  const Eigen::ColPivHouseholderQR<Matrix> qr(design);
  const auto diag = qr.matrixR().diagonal().cwiseAbs();
  const double largest = diag.maxCoeff();
  const double smallest = diag.minCoeff();
  const double condition = smallest > 0.0 ? largest / smallest : std::numeric_limits<double>::infinity();
  if (!(condition <= 1e12)) {
    fail(ErrorKind::ill_posed, context + ": rank-deficient design (condition estimate " +
                                   std::to_string(condition) + ")");
  }
  LeastSquaresFit fit;
  fit.solution = qr.solve(values);
  fit.rmse = std::sqrt((design * fit.solution - values).squaredNorm() /
                       static_cast<double>(values.size()));
  fit.condition = condition;
  return fit;
}

SurfaceCoefficients project_surface(const BasisSet& basis, std::span<const Quote> quotes,
                                    const std::string& date, const std::string& equity) {
  const auto n = static_cast<Eigen::Index>(quotes.size());
  const std::string where = "surface " + date + " " + equity;
  if (n < basis.size()) {
    fail(ErrorKind::ill_posed, where + ": need at least " + std::to_string(basis.size()) +
                                   " quotes, got " + std::to_string(n));
  }
  Matrix phi(n, basis.size());
  Vector values(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& q = quotes[static_cast<std::size_t>(i)];
    phi.row(i) = basis.row<double>(q.tau, q.delta).transpose();
    values(i) = q.iv;
  }
  const auto fit = solve_least_squares(phi, values, where);
  return {date, equity, fit.solution, fit.rmse};
}

std::vector<SurfaceCoefficients> project_panel(const BasisSet& basis, const PanelDataset& panel) {
  if (panel.coords != Coordinates::transformed) {
    fail(ErrorKind::domain, "basis projection expects a transformed panel");
  }
  std::vector<SurfaceCoefficients> out;
  out.reserve(panel.cells.size());
  for (std::size_t d = 0; d < panel.n_dates(); ++d) {
    for (std::size_t e = 0; e < panel.n_equities(); ++e) {
      out.push_back(project_surface(basis, panel.cell(d, e).quotes, panel.dates[d], panel.equities[e]));
    }
  }
  return out;
}

void write_coefficients_csv(std::ostream& out, const std::vector<SurfaceCoefficients>& coeffs) {
  out << "date,equity,k,a_k,rmse\n" << std::setprecision(17);
  for (const auto& c : coeffs) {
    for (Eigen::Index k = 0; k < c.a.size(); ++k) {
      out << c.date << ',' << c.equity << ',' << k << ',' << c.a(k) << ',' << c.rmse << '\n';
    }
  }
}

}  // namespace ivgen
