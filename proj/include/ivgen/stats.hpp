#pragma once

#include "ivgen/common.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>

namespace ivgen {

template <typename Scalar>
Scalar normal_pdf(Scalar x) {
  using std::exp;
  using std::sqrt;
  return exp(Scalar(-0.5) * x * x) / sqrt(Scalar(2) * std::numbers::pi_v<Scalar>);
}

template <typename Scalar>
Scalar normal_cdf(Scalar x) {
  using std::erfc;
  return Scalar(0.5) * erfc(-x / std::numbers::sqrt2_v<Scalar>);
}

/// Standard normal quantile. Throws a domain error outside (0,1).
double normal_quantile(double p);

/// Type-7 empirical quantile (linear interpolation between order statistics)
/// of an already sorted sample.
template <typename Scalar>
Scalar sorted_quantile(std::span<const Scalar> sorted, double p) {
  if (sorted.empty()) fail(ErrorKind::domain, "quantile of empty sample");
  if (!(p >= 0.0 && p <= 1.0)) fail(ErrorKind::domain, "quantile probability outside [0,1]");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const Scalar frac = Scalar(h - static_cast<double>(lo));
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

template <typename Scalar>
Scalar quantile(std::vector<Scalar> sample, double p) {
  std::sort(sample.begin(), sample.end());
  return sorted_quantile<Scalar>(std::span<const Scalar>(sample), p);
}

std::vector<double> quantiles(std::vector<double> sample, std::span<const double> probs);

/// Sample median and interquartile range (type-7 quantiles).
struct Spread {
  double median;
  double iqr;
};
Spread median_iqr(std::vector<double> sample);

/// SplitMix64 finaliser. Used to derive independent stream seeds from a
/// (base seed, stream id) pair so results never depend on execution order.
constexpr std::uint64_t mix_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t base, std::uint64_t stream) {
  return Rng(mix_seed(base, stream));
}

/// Fills a vector with i.i.d. standard normals.
Vector standard_normals(Rng& rng, Eigen::Index n);

}  // namespace ivgen
