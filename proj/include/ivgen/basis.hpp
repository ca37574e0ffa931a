#pragma once

#include "ivgen/common.hpp"
#include "ivgen/market_data.hpp"

#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace ivgen {

/// Orthonormal Legendre polynomial sqrt((2m+1)/2) * P_m(x) on [-1,1], by the
/// three-term recurrence (k+1) P_{k+1} = (2k+1) x P_k - k P_{k-1}.
template <typename Scalar>
Scalar legendre(int m, Scalar x) {
  if (m < 0) fail(ErrorKind::domain, "legendre order must be nonnegative");
  if (!(x >= Scalar(-1) && x <= Scalar(1))) {
    fail(ErrorKind::domain, "legendre argument outside [-1,1]");
  }
  Scalar p_prev(1);
  Scalar p = x;
  if (m == 0) {
    p = p_prev;
  } else {
    for (int k = 1; k < m; ++k) {
      const Scalar next = (Scalar(2 * k + 1) * x * p - Scalar(k) * p_prev) / Scalar(k + 1);
      p_prev = p;
      p = next;
    }
  }
  using std::sqrt;
  return sqrt(Scalar(2 * m + 1) / Scalar(2)) * p;
}

double legendre_eval(int m, double x);

/// Tensor-product Legendre basis {L_i(x) L_j(y) : i + j <= order_cap}, with x
/// the transformed maturity and y the transformed delta. Members are listed
/// in graded lexicographic order: by total degree, then by i ascending.
struct BasisSet {
  int order_cap = 0;
  std::vector<std::pair<int, int>> members;

  Eigen::Index size() const { return static_cast<Eigen::Index>(members.size()); }

  template <typename Scalar>
  Scalar eval(Eigen::Index k, Scalar x, Scalar y) const {
    const auto [i, j] = members[static_cast<std::size_t>(k)];
    return legendre<Scalar>(i, x) * legendre<Scalar>(j, y);
  }

  /// All basis functions at one point, as a row.
  template <typename Scalar>
  VectorX<Scalar> row(Scalar x, Scalar y) const {
    VectorX<Scalar> lx(order_cap + 1);
    VectorX<Scalar> ly(order_cap + 1);
    for (int m = 0; m <= order_cap; ++m) {
      lx(m) = legendre<Scalar>(m, x);
      ly(m) = legendre<Scalar>(m, y);
    }
    VectorX<Scalar> out(size());
    for (Eigen::Index k = 0; k < size(); ++k) {
      const auto [i, j] = members[static_cast<std::size_t>(k)];
      out(k) = lx(i) * ly(j);
    }
    return out;
  }
};

constexpr Eigen::Index basis_size(int order_cap) {
  return static_cast<Eigen::Index>((order_cap + 1) * (order_cap + 2) / 2);
}

BasisSet enumerate_basis(int order_cap);

/// N x B matrix of basis values at the given nodes.
Matrix design_matrix(const BasisSet& basis, std::span<const double> x, std::span<const double> y);

struct SurfaceCoefficients {
  std::string date;
  std::string equity;
  Vector a;
  double rmse = 0.0;
};

struct LeastSquaresFit {
  Vector solution;
  double rmse = 0.0;
  double condition = 0.0;
};

/// Least squares by column-pivoted Householder QR. Throws ill_posed when the
/// estimated condition number exceeds 1e12.
LeastSquaresFit solve_least_squares(const Matrix& design, const Vector& values,
                                    const std::string& context);

/// Projects one day's transformed quotes onto the basis.
SurfaceCoefficients project_surface(const BasisSet& basis, std::span<const Quote> quotes,
                                    const std::string& date = {}, const std::string& equity = {});

template <typename Derived>
double eval_surface(const Eigen::MatrixBase<Derived>& a, const BasisSet& basis, double x, double y) {
  if (a.size() != basis.size()) {
    fail(ErrorKind::shape, "coefficient vector has length " + std::to_string(a.size()) +
                               " but basis has " + std::to_string(basis.size()) + " members");
  }
  return basis.row<double>(x, y).dot(a);
}

/// Every (date, equity) cell of a transformed panel projected onto the basis,
/// in date-major order.
std::vector<SurfaceCoefficients> project_panel(const BasisSet& basis, const PanelDataset& transformed);

void write_coefficients_csv(std::ostream& out, const std::vector<SurfaceCoefficients>& coeffs);

}  // namespace ivgen
