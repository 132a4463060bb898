#pragma once

#include "pdrins/core.hpp"

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace pdr {

struct AllanCurve {
  std::vector<double> taus;      // s, strictly increasing
  std::vector<double> adev;      // sensor units
  std::vector<double> clusters;  // record length / cluster length
  double fs = 0.0;
};

/// Random-walk coefficient N (units/sqrt(Hz), the -1/2 line read at 1 s)
/// and bias instability B (units).
struct NoiseCoefficients {
  double N = 0.0;
  double B = 0.0;
};

inline constexpr std::size_t kAllanMinSamples = 1000;
/// Flat-region scaling of flicker noise, sqrt(2 ln2 / pi).
inline constexpr double kBiasInstabilityScale = 0.664;

/// Overlapping Allan deviation at log-spaced cluster lengths m, from one
/// sample up to a ninth of the record.
inline AllanCurve allan_deviation(std::span<const double> series, double fs, int points_per_decade = 10) {
  const std::size_t n = series.size();
  if (n < kAllanMinSamples) {
    throw InputError("allan_deviation: " + std::to_string(n) + " samples, at least " +
                     std::to_string(kAllanMinSamples) + " required");
  }
  if (!(fs > 0.0)) throw InputError("allan_deviation: fs must be > 0");
  if (points_per_decade < 1) throw InputError("allan_deviation: points_per_decade must be >= 1");

  // Integrated series of (y - y0); the offset cancels in the differences
  // and keeps constant input exactly zero.
  std::vector<long double> x(n + 1, 0.0L);
  const double y0 = series[0];
  for (std::size_t i = 0; i < n; ++i) x[i + 1] = x[i] + static_cast<long double>(series[i] - y0);

  std::vector<std::size_t> ms;
  const std::size_t m_max = n / 9;
  for (int j = 0;; ++j) {
    const auto m = static_cast<std::size_t>(std::llround(std::pow(10.0, j / static_cast<double>(points_per_decade))));
    if (m > m_max) break;
    if (ms.empty() || m > ms.back()) ms.push_back(m);
  }

  AllanCurve c;
  c.fs = fs;
  for (const std::size_t m : ms) {
    const std::size_t terms = n - 2 * m + 1;
    long double acc = 0.0L;
    for (std::size_t k = 0; k < terms; ++k) {
      const long double d = x[k + 2 * m] - 2.0L * x[k + m] + x[k];
      acc += d * d;
    }
    // cluster means differ by d / m; half the mean squared difference
    const long double md = static_cast<long double>(m);
    const long double avar = acc / (2.0L * md * md * static_cast<long double>(terms));
    c.taus.push_back(static_cast<double>(m) / fs);
    c.adev.push_back(std::sqrt(static_cast<double>(avar)));
    c.clusters.push_back(static_cast<double>(n) / static_cast<double>(m));
  }
  return c;
}

struct CoefficientOptions {
  double slope_tolerance = 0.1;
  /// Only points averaging at least this many clusters enter the bias
  /// instability minimum; sparser points scatter low.
  double min_clusters_for_b = 100.0;
};

inline NoiseCoefficients extract_coefficients(const AllanCurve& curve, const CoefficientOptions& opt = {}) {
  const std::size_t n = curve.taus.size();
  if (n < 3 || curve.adev.size() != n) throw InputError("extract_coefficients: curve too short");
  if (std::log10(curve.taus.back() / curve.taus.front()) < 3.0 - 1e-9) {
    throw InputError("extract_coefficients: curve spans less than 3 decades of tau");
  }
  for (double a : curve.adev) {
    if (!(a > 0.0) || !std::isfinite(a)) {
      throw NumericalError("extract_coefficients: ARW not identifiable (zero or invalid deviation)");
    }
  }
  std::vector<double> lt(n), la(n), slope(n);
  for (std::size_t i = 0; i < n; ++i) {
    lt[i] = std::log10(curve.taus[i]);
    la[i] = std::log10(curve.adev[i]);
  }
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lo = i == 0 ? 0 : i - 1;
    const std::size_t hi = i + 1 == n ? i : i + 1;
    slope[i] = (la[hi] - la[lo]) / (lt[hi] - lt[lo]);
  }
  // longest run of points whose local slope is close to -1/2
  std::size_t best_lo = 0, best_len = 0;
  for (std::size_t i = 0; i < n;) {
    if (std::abs(slope[i] + 0.5) > opt.slope_tolerance) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < n && std::abs(slope[j] + 0.5) <= opt.slope_tolerance) ++j;
    if (j - i > best_len) {
      best_lo = i;
      best_len = j - i;
    }
    i = j;
  }
  if (best_len < 2) throw NumericalError("extract_coefficients: ARW not identifiable");

  // fixed -1/2 slope: the intercept is the mean of log(adev) + log(tau)/2
  double icpt = 0.0;
  for (std::size_t i = best_lo; i < best_lo + best_len; ++i) icpt += la[i] + 0.5 * lt[i];
  icpt /= static_cast<double>(best_len);

  double min_adev = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    const bool dense = curve.clusters.empty() || curve.clusters[i] >= opt.min_clusters_for_b;
    if (dense) min_adev = std::min(min_adev, curve.adev[i]);
  }
  if (!std::isfinite(min_adev)) min_adev = *std::min_element(curve.adev.begin(), curve.adev.end());

  return {std::pow(10.0, icpt), min_adev / kBiasInstabilityScale};
}

}  // namespace pdr
