#include "ivgen/stats.hpp"

#include <boost/math/distributions/normal.hpp>

namespace ivgen {

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    fail(ErrorKind::domain, "normal quantile requires p in (0,1), got " + std::to_string(p));
  }
  static const boost::math::normal_distribution<double> standard(0.0, 1.0);
  return boost::math::quantile(standard, p);
}

std::vector<double> quantiles(std::vector<double> sample, std::span<const double> probs) {
  std::sort(sample.begin(), sample.end());
  std::vector<double> out;
  out.reserve(probs.size());
  for (double p : probs) out.push_back(sorted_quantile<double>(sample, p));
  return out;
}

Spread median_iqr(std::vector<double> sample) {
  std::sort(sample.begin(), sample.end());
  const std::span<const double> s(sample);
  return {sorted_quantile<double>(s, 0.5),
          sorted_quantile<double>(s, 0.75) - sorted_quantile<double>(s, 0.25)};
}

Vector standard_normals(Rng& rng, Eigen::Index n) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector z(n);
  for (Eigen::Index i = 0; i < n; ++i) z(i) = normal(rng);
  return z;
}

}  // namespace ivgen
