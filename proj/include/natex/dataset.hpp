#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "natex/errors.hpp"
#include "natex/rng.hpp"

namespace natex {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using IntVector = Eigen::VectorXi;
using Index = Eigen::Index;

// Propensity truncation range applied throughout the toolkit.
inline constexpr double kPropensityFloor = 0.01;
inline constexpr double kPropensityCeil = 0.99;

inline double logistic(double t) { return 1.0 / (1.0 + std::exp(-t)); }
inline double logit(double p) { return std::log(p / (1.0 - p)); }

inline double clamp_propensity(double p) {
  return std::clamp(p, kPropensityFloor, kPropensityCeil);
}

// Parameters of the synthetic-instance generator.
struct GenerationConfig {
  std::size_t n = 20000;
  std::size_t d = 10;
  double coeff_scale = 3.0;              // propensity logit slope magnitude
  double target_treated_fraction = 0.443;
  double effect_scale = 0.25;            // c in tau(p) = c * sqrt(p - 1/2)
  double outcome_noise_sd = 0.05;
  std::uint64_t seed = 0;

  void validate() const {
    if (n < 1) throw validation_error("generation config: n must be >= 1");
    if (d < 1) throw validation_error("generation config: d must be >= 1");
    if (coeff_scale < 0) throw validation_error("generation config: coeff_scale must be >= 0");
    if (effect_scale < 0) throw validation_error("generation config: effect_scale must be >= 0");
    if (outcome_noise_sd < 0) {
      throw validation_error("generation config: outcome_noise_sd must be >= 0");
    }
    if (!(target_treated_fraction > kPropensityFloor &&
          target_treated_fraction < kPropensityCeil)) {
      throw validation_error(
          "generation config: target_treated_fraction must lie in (0.01, 0.99)");
    }
  }
};

// Ground-truth instance: both potential outcomes and the true propensities.
// Immutable after construction; build through create() so the invariants
// (matching lengths, truncated propensities, cached true ATE) always hold.
struct FullDataset {
  Matrix covariates;   // n x d
  Vector y1;           // treatment outcomes
  Vector y0;           // control outcomes
  Vector propensity;   // in [0.01, 0.99]
  double true_ate = 0.0;

  Index size() const { return covariates.rows(); }
  Index dim() const { return covariates.cols(); }

  static FullDataset create(Matrix covariates, Vector y0, Vector y1, Vector propensity) {
    const Index n = covariates.rows();
    if (y0.size() != n || y1.size() != n || propensity.size() != n) {
      throw validation_error("dataset: outcome/propensity lengths must match covariate rows");
    }
    for (Index i = 0; i < n; ++i) {
      const double p = propensity[i];
      if (!(p > 0.0 && p < 1.0)) {
        throw validation_error("dataset: propensity outside (0, 1) at row " + std::to_string(i));
      }
      propensity[i] = clamp_propensity(p);
    }
    FullDataset full;
    full.covariates = std::move(covariates);
    full.y0 = std::move(y0);
    full.y1 = std::move(y1);
    full.propensity = std::move(propensity);
    full.true_ate = n == 0 ? 0.0 : (full.y1 - full.y0).mean();
    return full;
  }
};

// What an estimator is allowed to see: one outcome per row.
struct ObservedDataset {
  Matrix covariates;  // n x d
  IntVector z;        // 0/1 treatment assignment
  Vector y_obs;       // y1 where z = 1, else y0

  Index size() const { return covariates.rows(); }
  Index dim() const { return covariates.cols(); }
};

// i.i.d. standard-normal covariates; identical seed gives identical entries.
inline Matrix generate_covariates(std::size_t n, std::size_t d, std::uint64_t seed) {
  if (d < 1) throw validation_error("generate_covariates: d must be >= 1");
  Rng rng(seed);
  Matrix x(static_cast<Index>(n), static_cast<Index>(d));
  for (Index i = 0; i < x.rows(); ++i) {
    for (Index j = 0; j < x.cols(); ++j) {
      x(i, j) = rng.normal();
    }
  }
  return x;
}

namespace detail {

// Mean of clamp(logistic(score_i + intercept)). Nondecreasing in the
// intercept, which is what the bisection below relies on.
inline double truncated_logistic_mean(const Vector& score, double intercept) {
  double sum = 0.0;
  for (Index i = 0; i < score.size(); ++i) {
    sum += clamp_propensity(logistic(score[i] + intercept));
  }
  return sum / static_cast<double>(score.size());
}

}  // namespace detail

// Logistic-linear propensities p_i = clamp(logistic(coeff_scale * x_i . beta + b))
// with beta a seeded random unit direction and the intercept b located by
// bisection until the mean propensity is within 1e-4 of the target.
inline Vector generate_propensities(const Matrix& covariates, double coeff_scale,
                                    double target_treated_fraction, std::uint64_t seed) {
  if (covariates.rows() == 0) {
    throw validation_error("generate_propensities: empty covariate matrix");
  }
  if (!(target_treated_fraction > kPropensityFloor &&
        target_treated_fraction < kPropensityCeil)) {
    throw validation_error("generate_propensities: target must lie in (0.01, 0.99)");
  }
  if (coeff_scale < 0) {
    throw validation_error("generate_propensities: coeff_scale must be >= 0");
  }

  Rng rng(seed);
  Vector beta(covariates.cols());
  for (Index j = 0; j < beta.size(); ++j) beta[j] = rng.normal();
  const double norm = beta.norm();
  if (norm > 0) {
    beta /= norm;
  } else {
    beta.setZero();
    beta[0] = 1.0;
  }

  const Vector score = coeff_scale * (covariates * beta);

  // Constant scores admit the exact solution p = target for every row.
  if (score.maxCoeff() == score.minCoeff()) {
    return Vector::Constant(covariates.rows(), target_treated_fraction);
  }

  const double spread = score.cwiseAbs().maxCoeff();
  double lo = -40.0 - spread;
  double hi = 40.0 + spread;
  constexpr int kMaxIterations = 200;
  constexpr double kTolerance = 1e-4;
  for (int it = 0; it < kMaxIterations; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double mean = detail::truncated_logistic_mean(score, mid);
    if (std::abs(mean - target_treated_fraction) <= kTolerance) {
      Vector p(score.size());
      for (Index i = 0; i < p.size(); ++i) {
        p[i] = clamp_propensity(logistic(score[i] + mid));
      }
      return p;
    }
    if (mean < target_treated_fraction) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  throw numeric_error(
      "generate_propensities: intercept bisection did not converge; "
      "target treated fraction unreachable under truncation");
}

// Control outcome 1 - p plus noise; treatment outcome adds
// effect_scale * sqrt(max(0, p - 1/2)), so the effect is zero below p = 1/2
// and grows with the propensity.
inline std::pair<Vector, Vector> generate_outcomes(const Vector& propensity,
                                                   double effect_scale, double noise_sd,
                                                   std::uint64_t seed) {
  if (noise_sd < 0) throw validation_error("generate_outcomes: noise_sd must be >= 0");
  if (effect_scale < 0) throw validation_error("generate_outcomes: effect_scale must be >= 0");
  for (Index i = 0; i < propensity.size(); ++i) {
    if (!(propensity[i] > 0.0 && propensity[i] < 1.0)) {
      throw validation_error("generate_outcomes: propensity outside (0, 1) at row " +
                             std::to_string(i));
    }
  }
  Rng rng(seed);
  Vector y0(propensity.size()), y1(propensity.size());
  for (Index i = 0; i < propensity.size(); ++i) {
    const double p = propensity[i];
    const double eps0 = noise_sd > 0 ? noise_sd * rng.normal() : 0.0;
    const double eps1 = noise_sd > 0 ? noise_sd * rng.normal() : 0.0;
    y0[i] = (1.0 - p) + eps0;
    y1[i] = y0[i] + effect_scale * std::sqrt(std::max(0.0, p - 0.5)) + eps1;
  }
  return {std::move(y0), std::move(y1)};
}

// Independent Bernoulli(p_i) treatment assignment.
inline IntVector sample_treatment(const Vector& propensity, std::uint64_t seed) {
  Rng rng(seed);
  IntVector z(propensity.size());
  for (Index i = 0; i < propensity.size(); ++i) {
    const double p = propensity[i];
    if (!(p > 0.0 && p < 1.0)) {
      throw domain_error("sample_treatment: propensity outside (0, 1) at row " +
                         std::to_string(i));
    }
    z[i] = rng.bernoulli(p) ? 1 : 0;
  }
  return z;
}

// Masks the counterfactual outcome: y_obs_i = y1_i if z_i = 1 else y0_i.
inline ObservedDataset observe(const FullDataset& full, const IntVector& z) {
  if (z.size() != full.size()) {
    throw validation_error("observe: assignment length does not match dataset size");
  }
  ObservedDataset obs;
  obs.covariates = full.covariates;
  obs.z = z;
  obs.y_obs.resize(z.size());
  for (Index i = 0; i < z.size(); ++i) {
    if (z[i] != 0 && z[i] != 1) {
      throw validation_error("observe: assignment entries must be 0 or 1");
    }
    obs.y_obs[i] = z[i] == 1 ? full.y1[i] : full.y0[i];
  }
  return obs;
}

// y + N(0, sd^2) noise; sd = 0 returns the input unchanged.
inline Vector add_outcome_noise(const Vector& y, double sd, std::uint64_t seed) {
  if (sd < 0) throw validation_error("add_outcome_noise: sd must be >= 0");
  if (sd == 0) return y;
  Rng rng(seed);
  Vector out(y.size());
  for (Index i = 0; i < y.size(); ++i) out[i] = y[i] + sd * rng.normal();
  return out;
}

// Additive N(0, level^2) noise on the log-odds scale, then back through the
// logistic and the truncation range. Inputs are truncated first so the
// log-odds transform is finite; level = 0 is the identity on truncated input.
inline Vector perturb_propensities(const Vector& propensity, double level, std::uint64_t seed) {
  if (level < 0) throw validation_error("perturb_propensities: level must be >= 0");
  Rng rng(seed);
  Vector out(propensity.size());
  for (Index i = 0; i < propensity.size(); ++i) {
    const double p = clamp_propensity(propensity[i]);
    if (level == 0) {
      out[i] = p;
    } else {
      out[i] = clamp_propensity(logistic(logit(p) + level * rng.normal()));
    }
  }
  return out;
}

// Full generation pipeline driven by one seed: covariates, propensities,
// outcomes each consume an independent derived stream.
inline FullDataset generate_dataset(const GenerationConfig& config) {
  config.validate();
  Matrix x = generate_covariates(config.n, config.d, derive_seed(config.seed, 0));
  Vector p = generate_propensities(x, config.coeff_scale, config.target_treated_fraction,
                                   derive_seed(config.seed, 1));
  auto [y0, y1] = generate_outcomes(p, config.effect_scale, config.outcome_noise_sd,
                                    derive_seed(config.seed, 2));
  return FullDataset::create(std::move(x), std::move(y0), std::move(y1), std::move(p));
}

// Seeded without-replacement subsample of m rows, in ascending row order.
inline FullDataset subsample(const FullDataset& full, std::size_t m, std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(full.size());
  if (m == 0) throw validation_error("subsample: m must be >= 1");
  if (m > n) throw validation_error("subsample: m exceeds dataset size");
  std::vector<Index> rows(n);
  for (std::size_t i = 0; i < n; ++i) rows[i] = static_cast<Index>(i);
  Rng rng(seed);
  // Partial Fisher-Yates: first m entries are the sample.
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
    std::swap(rows[i], rows[j]);
  }
  rows.resize(m);
  std::sort(rows.begin(), rows.end());

  FullDataset sub;
  sub.covariates.resize(static_cast<Index>(m), full.dim());
  sub.y0.resize(static_cast<Index>(m));
  sub.y1.resize(static_cast<Index>(m));
  sub.propensity.resize(static_cast<Index>(m));
  for (std::size_t i = 0; i < m; ++i) {
    sub.covariates.row(static_cast<Index>(i)) = full.covariates.row(rows[i]);
    sub.y0[static_cast<Index>(i)] = full.y0[rows[i]];
    sub.y1[static_cast<Index>(i)] = full.y1[rows[i]];
    sub.propensity[static_cast<Index>(i)] = full.propensity[rows[i]];
  }
  sub.true_ate = m == 0 ? 0.0 : (sub.y1 - sub.y0).mean();
  return sub;
}

}  // namespace natex
