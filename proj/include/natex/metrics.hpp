#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "natex/dataset.hpp"
#include "natex/errors.hpp"

namespace natex {

// Kahan compensated accumulator; enumeration and metric sums use it so that
// reduction order cannot move results past the documented tolerances.
class KahanSum {
 public:
  void add(double x) {
    const double y = x - c_;
    const double t = s_ + y;
    c_ = (t - s_) - y;
    s_ = t;
  }
  double value() const { return s_; }

 private:
  double s_ = 0.0;
  double c_ = 0.0;
};

inline double squared_error(double estimate, double truth) {
  if (!std::isfinite(estimate) || !std::isfinite(truth)) {
    throw domain_error("squared_error: inputs must be finite");
  }
  const double d = estimate - truth;
  return d * d;
}

// Product-moment correlation; throws on constant input.
inline double pearson(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) throw validation_error("pearson: length mismatch");
  if (a.size() < 2) throw validation_error("pearson: need at least two points");
  const double ma = a.mean();
  const double mb = b.mean();
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (Index i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma;
    const double db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) {
    throw domain_error("pearson: correlation undefined for constant input");
  }
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

// Sample distance correlation from double-centered pairwise distance
// matrices. Computed with O(n) memory: row means first, then a second pass
// over pairs. Constant input has zero distance variance; by convention the
// result is 0 (the independence semantics of the measure).
inline double distance_correlation(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) throw validation_error("distance_correlation: length mismatch");
  const Index n = a.size();
  if (n < 2) throw validation_error("distance_correlation: need at least two points");

  Vector row_a = Vector::Zero(n), row_b = Vector::Zero(n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      row_a[i] += std::abs(a[i] - a[j]);
      row_b[i] += std::abs(b[i] - b[j]);
    }
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  const double grand_a = row_a.sum() * inv_n * inv_n;
  const double grand_b = row_b.sum() * inv_n * inv_n;
  row_a *= inv_n;
  row_b *= inv_n;

  KahanSum sab, saa, sbb;
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      const double ca = std::abs(a[i] - a[j]) - row_a[i] - row_a[j] + grand_a;
      const double cb = std::abs(b[i] - b[j]) - row_b[i] - row_b[j] + grand_b;
      sab.add(ca * cb);
      saa.add(ca * ca);
      sbb.add(cb * cb);
    }
  }
  const double dcov2 = std::max(0.0, sab.value() * inv_n * inv_n);
  const double dvar_a = std::max(0.0, saa.value() * inv_n * inv_n);
  const double dvar_b = std::max(0.0, sbb.value() * inv_n * inv_n);
  if (dvar_a == 0.0 || dvar_b == 0.0) return 0.0;
  const double r2 = dcov2 / std::sqrt(dvar_a * dvar_b);
  return std::min(1.0, std::sqrt(std::max(0.0, r2)));
}

// Mean negative log likelihood of the assignments under p, in nats.
inline double binary_cross_entropy(const Vector& p, const IntVector& z) {
  if (p.size() != z.size()) throw validation_error("binary_cross_entropy: length mismatch");
  if (p.size() == 0) throw validation_error("binary_cross_entropy: empty input");
  KahanSum sum;
  for (Index i = 0; i < p.size(); ++i) {
    if (!(p[i] > 0.0 && p[i] < 1.0)) {
      throw domain_error("binary_cross_entropy: propensity outside (0, 1) at row " +
                         std::to_string(i));
    }
    if (z[i] != 0 && z[i] != 1) {
      throw validation_error("binary_cross_entropy: assignments must be 0 or 1");
    }
    sum.add(z[i] == 1 ? -std::log(p[i]) : -std::log(1.0 - p[i]));
  }
  return sum.value() / static_cast<double>(p.size());
}

struct CalibrationBin {
  double mean_predicted = 0.0;
  double mean_treated = 0.0;
  std::size_t count = 0;
};

struct CalibrationCurve {
  std::vector<CalibrationBin> bins;  // empty bins omitted
};

// Equal-width bins over [0, 1] by predicted propensity; per nonempty bin the
// mean prediction, the observed treatment rate, and the row count.
inline CalibrationCurve calibration_curve(const Vector& p, const IntVector& z,
                                          std::size_t n_bins) {
  if (n_bins < 1) throw validation_error("calibration_curve: n_bins must be >= 1");
  if (p.size() != z.size()) throw validation_error("calibration_curve: length mismatch");
  std::vector<double> sum_p(n_bins, 0.0), sum_z(n_bins, 0.0);
  std::vector<std::size_t> count(n_bins, 0);
  for (Index i = 0; i < p.size(); ++i) {
    auto bin = static_cast<std::size_t>(
        std::clamp(std::floor(p[i] * static_cast<double>(n_bins)), 0.0,
                   static_cast<double>(n_bins - 1)));
    sum_p[bin] += p[i];
    sum_z[bin] += static_cast<double>(z[i]);
    ++count[bin];
  }
  CalibrationCurve curve;
  for (std::size_t b = 0; b < n_bins; ++b) {
    if (count[b] == 0) continue;
    curve.bins.push_back({sum_p[b] / static_cast<double>(count[b]),
                          sum_z[b] / static_cast<double>(count[b]), count[b]});
  }
  return curve;
}

// Aggregated squared-error and timing statistics for one estimator.
struct RunSummary {
  double mean = 0.0;
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
  double mean_time_s = 0.0;
  std::size_t runs = 0;
  std::size_t failures = 0;
};

// Linear-interpolation quantile of a sorted vector, q in [0, 1].
inline double interpolated_quantile(const std::vector<double>& sorted, double q) {
  const std::size_t n = sorted.size();
  if (n == 0) throw validation_error("quantile: empty input");
  if (n == 1) return sorted[0];
  const double h = q * static_cast<double>(n - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, n - 1);
  const double frac = h - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

// Mean, interpolated quartiles, and mean time over one estimator's runs.
inline RunSummary quartile_summary(const std::vector<double>& values,
                                   const std::vector<double>& times) {
  if (values.empty()) throw validation_error("quartile_summary: empty input");
  std::vector<double> sorted = values;
  std::sort(sorted.begin(), sorted.end());
  RunSummary s;
  KahanSum mean;
  for (double v : values) mean.add(v);
  s.mean = mean.value() / static_cast<double>(values.size());
  s.q1 = interpolated_quantile(sorted, 0.25);
  s.median = interpolated_quantile(sorted, 0.5);
  s.q3 = interpolated_quantile(sorted, 0.75);
  if (!times.empty()) {
    KahanSum t;
    for (double v : times) t.add(v);
    s.mean_time_s = t.value() / static_cast<double>(times.size());
  }
  s.runs = values.size();
  return s;
}

struct DatasetAttributes {
  std::size_t size = 0;
  std::size_t variables = 0;
  double treated_pct = 0.0;  // percent of rows assigned to treatment
  double bce = 0.0;          // nats
  double corr_y1_p = 0.0;
  double corr_y0_p = 0.0;
};

inline DatasetAttributes dataset_attributes(const FullDataset& full, const IntVector& z,
                                            std::size_t variables) {
  if (z.size() != full.size()) {
    throw validation_error("dataset_attributes: assignment length mismatch");
  }
  DatasetAttributes attrs;
  attrs.size = static_cast<std::size_t>(full.size());
  attrs.variables = variables;
  double treated = 0.0;
  for (Index i = 0; i < z.size(); ++i) treated += static_cast<double>(z[i]);
  attrs.treated_pct = full.size() == 0 ? 0.0 : 100.0 * treated / static_cast<double>(z.size());
  attrs.bce = binary_cross_entropy(full.propensity, z);
  attrs.corr_y1_p = pearson(full.y1, full.propensity);
  attrs.corr_y0_p = pearson(full.y0, full.propensity);
  return attrs;
}

inline DatasetAttributes dataset_attributes(const FullDataset& full, const IntVector& z) {
  return dataset_attributes(full, z, static_cast<std::size_t>(full.dim()));
}

}  // namespace natex
