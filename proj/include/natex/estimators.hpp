#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "natex/dataset.hpp"
#include "natex/errors.hpp"
#include "natex/learners.hpp"
#include "natex/metrics.hpp"

namespace natex {

struct EstimatorResult {
  double estimate = 0.0;
  double elapsed_s = 0.0;
  std::string estimator_name;
  std::uint64_t seed = 0;
};

// Disjoint index halves covering {0..n-1} with sizes differing by at most one.
struct SplitPartition {
  std::vector<Index> s1;
  std::vector<Index> s2;

  static SplitPartition draw(Index n, Rng& rng) {
    std::vector<Index> order(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    rng.shuffle(order);
    SplitPartition split;
    const auto half = static_cast<std::size_t>(n) / 2;
    split.s1.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(half));
    split.s2.assign(order.begin() + static_cast<std::ptrdiff_t>(half), order.end());
    std::sort(split.s1.begin(), split.s1.end());
    std::sort(split.s2.begin(), split.s2.end());
    return split;
  }

  static SplitPartition draw(Index n, std::uint64_t seed) {
    Rng rng(seed);
    return draw(n, rng);
  }
};

namespace detail {

inline void check_propensities_open(const Vector& p) {
  for (Index i = 0; i < p.size(); ++i) {
    if (!(p[i] > 0.0 && p[i] < 1.0)) {
      throw domain_error("estimator: propensity outside (0, 1) at row " + std::to_string(i));
    }
  }
}

inline void check_both_arms(const IntVector& z) {
  bool any0 = false, any1 = false;
  for (Index i = 0; i < z.size(); ++i) {
    (z[i] == 1 ? any1 : any0) = true;
  }
  if (!any1 || !any0) {
    throw degenerate_error("estimator: need at least one treated and one control row");
  }
}

// Rows of one arm inside an index subset, with per-row scheme weights.
struct ArmData {
  Matrix x;
  Vector y;
  Vector w;
};

inline ArmData gather_arm(const ObservedDataset& obs, const Vector& p,
                          const std::vector<Index>& rows, int arm, WeightScheme scheme) {
  std::vector<Index> keep;
  for (Index i : rows) {
    if (obs.z[i] == arm) keep.push_back(i);
  }
  ArmData data;
  data.x.resize(static_cast<Index>(keep.size()), obs.dim());
  data.y.resize(static_cast<Index>(keep.size()));
  data.w.resize(static_cast<Index>(keep.size()));
  for (std::size_t k = 0; k < keep.size(); ++k) {
    const Index i = keep[k];
    data.x.row(static_cast<Index>(k)) = obs.covariates.row(i);
    data.y[static_cast<Index>(k)] = obs.y_obs[i];
    data.w[static_cast<Index>(k)] =
        arm == 1 ? treatment_weight(scheme, p[i]) : control_weight(scheme, p[i]);
  }
  return data;
}

inline std::vector<Index> all_rows(Index n) {
  std::vector<Index> rows(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) rows[static_cast<std::size_t>(i)] = i;
  return rows;
}

}  // namespace detail

// Convex combination of the two arm predictions by treatment probability:
//   yhat_i = (1 - p_i) f1_i + p_i f0_i.
inline Vector adjustment(const Vector& f1_vals, const Vector& f0_vals, const Vector& p) {
  if (f1_vals.size() != f0_vals.size() || f1_vals.size() != p.size()) {
    throw validation_error("adjustment: length mismatch");
  }
  Vector yhat(p.size());
  for (Index i = 0; i < p.size(); ++i) {
    yhat[i] = (1.0 - p[i]) * f1_vals[i] + p[i] * f0_vals[i];
  }
  return yhat;
}

// Doubly robust sum with explicit per-row predictions:
//   (1/n) sum_i [ (y_i - f1_i)/p_i 1[z=1] - (y_i - f0_i)/(1-p_i) 1[z!=1]
//                 + f1_i - f0_i ].
inline double dr_formula(const Vector& y_obs, const IntVector& z, const Vector& p,
                         const Vector& f1_vals, const Vector& f0_vals) {
  KahanSum sum;
  for (Index i = 0; i < y_obs.size(); ++i) {
    if (z[i] == 1) {
      sum.add((y_obs[i] - f1_vals[i]) / p[i]);
    } else {
      sum.add(-(y_obs[i] - f0_vals[i]) / (1.0 - p[i]));
    }
    sum.add(f1_vals[i] - f0_vals[i]);
  }
  return sum.value() / static_cast<double>(y_obs.size());
}

// Split-training form with a combined per-row adjustment:
//   (1/n) sum_i [ (y_i - yhat_i)/p_i 1[z=1] - (y_i - yhat_i)/(1-p_i) 1[z!=1] ].
inline double dr_split_formula(const Vector& y_obs, const IntVector& z, const Vector& p,
                               const Vector& yhat) {
  KahanSum sum;
  for (Index i = 0; i < y_obs.size(); ++i) {
    if (z[i] == 1) {
      sum.add((y_obs[i] - yhat[i]) / p[i]);
    } else {
      sum.add(-(y_obs[i] - yhat[i]) / (1.0 - p[i]));
    }
  }
  return sum.value() / static_cast<double>(y_obs.size());
}

// (2/n) sum_i (y_i 1[z=1] - y_i 1[z!=1]).
inline double direct_difference(const Vector& y_obs, const IntVector& z) {
  if (y_obs.size() != z.size()) throw validation_error("direct_difference: length mismatch");
  KahanSum sum;
  for (Index i = 0; i < y_obs.size(); ++i) {
    sum.add(z[i] == 1 ? y_obs[i] : -y_obs[i]);
  }
  return 2.0 * sum.value() / static_cast<double>(y_obs.size());
}

// Direct difference on residuals against a single prediction fitted to all
// observed outcomes with unit weights.
inline double adjusted_direct(const ObservedDataset& obs, const RegressorSpec& spec,
                              std::uint64_t seed) {
  detail::check_both_arms(obs.z);
  const Vector w = Vector::Ones(obs.size());
  const Regressor f = fit_regressor(obs.covariates, obs.y_obs, w, spec, seed);
  const Vector pred = f.predict(obs.covariates);
  KahanSum sum;
  for (Index i = 0; i < obs.size(); ++i) {
    const double r = obs.y_obs[i] - pred[i];
    sum.add(obs.z[i] == 1 ? r : -r);
  }
  return 2.0 * sum.value() / static_cast<double>(obs.size());
}

// (1/n) sum_i (y_i/p_i 1[z=1] - y_i/(1-p_i) 1[z!=1]).
inline double horvitz_thompson(const Vector& y_obs, const IntVector& z, const Vector& p) {
  if (y_obs.size() != z.size() || y_obs.size() != p.size()) {
    throw validation_error("horvitz_thompson: length mismatch");
  }
  detail::check_propensities_open(p);
  KahanSum sum;
  for (Index i = 0; i < y_obs.size(); ++i) {
    sum.add(z[i] == 1 ? y_obs[i] / p[i] : -y_obs[i] / (1.0 - p[i]));
  }
  return sum.value() / static_cast<double>(y_obs.size());
}

// Arm-mean difference restricted to rows with propensity within `window`
// of 1/2.
inline double regression_discontinuity(const Vector& y_obs, const IntVector& z, const Vector& p,
                                       double window) {
  if (!(window > 0)) throw validation_error("regression_discontinuity: window must be > 0");
  if (y_obs.size() != z.size() || y_obs.size() != p.size()) {
    throw validation_error("regression_discontinuity: length mismatch");
  }
  double sum1 = 0.0, sum0 = 0.0;
  std::size_t n1 = 0, n0 = 0;
  for (Index i = 0; i < p.size(); ++i) {
    if (p[i] < 0.5 - window || p[i] > 0.5 + window) continue;
    if (z[i] == 1) {
      sum1 += y_obs[i];
      ++n1;
    } else {
      sum0 += y_obs[i];
      ++n0;
    }
  }
  if (n1 == 0 || n0 == 0) {
    throw degenerate_error(
        "regression_discontinuity: no treated or no control rows within the window");
  }
  return sum1 / static_cast<double>(n1) - sum0 / static_cast<double>(n0);
}

// Average of within-bin arm-mean differences over q equal-width propensity
// bins; bins missing one arm are skipped.
inline double propensity_stratification(const Vector& y_obs, const IntVector& z, const Vector& p,
                                        std::size_t q) {
  if (q < 1) throw validation_error("propensity_stratification: q must be >= 1");
  if (y_obs.size() != z.size() || y_obs.size() != p.size()) {
    throw validation_error("propensity_stratification: length mismatch");
  }
  std::vector<double> sum1(q, 0.0), sum0(q, 0.0);
  std::vector<std::size_t> n1(q, 0), n0(q, 0);
  for (Index i = 0; i < p.size(); ++i) {
    auto bin = static_cast<std::size_t>(std::clamp(
        std::floor(p[i] * static_cast<double>(q)), 0.0, static_cast<double>(q - 1)));
    if (z[i] == 1) {
      sum1[bin] += y_obs[i];
      ++n1[bin];
    } else {
      sum0[bin] += y_obs[i];
      ++n0[bin];
    }
  }
  double total = 0.0;
  std::size_t contributing = 0;
  for (std::size_t b = 0; b < q; ++b) {
    if (n1[b] == 0 || n0[b] == 0) continue;
    total += sum1[b] / static_cast<double>(n1[b]) - sum0[b] / static_cast<double>(n0[b]);
    ++contributing;
  }
  if (contributing == 0) {
    throw degenerate_error("propensity_stratification: no bin contains both arms");
  }
  return total / static_cast<double>(contributing);
}

// Mean difference of arm-specific predictions fitted with unit weights.
inline double direct_prediction(const ObservedDataset& obs, const RegressorSpec& spec,
                                std::uint64_t seed) {
  detail::check_both_arms(obs.z);
  const auto rows = detail::all_rows(obs.size());
  const auto treated = detail::gather_arm(obs, Vector::Ones(obs.size()), rows, 1,
                                          WeightScheme::kUnit);
  const auto control = detail::gather_arm(obs, Vector::Ones(obs.size()), rows, 0,
                                          WeightScheme::kUnit);
  const Regressor f1 =
      fit_regressor(treated.x, treated.y, treated.w, spec, derive_seed(seed, 1));
  const Regressor f0 =
      fit_regressor(control.x, control.y, control.w, spec, derive_seed(seed, 2));
  const Vector pred1 = f1.predict(obs.covariates);
  const Vector pred0 = f0.predict(obs.covariates);
  KahanSum sum;
  for (Index i = 0; i < obs.size(); ++i) sum.add(pred1[i] - pred0[i]);
  return sum.value() / static_cast<double>(obs.size());
}

// Standard doubly robust estimator: arm models trained on the full data
// (no split) with scheme weights, then inverse-propensity-corrected
// residuals plus the prediction difference.
inline double doubly_robust(const ObservedDataset& obs, const Vector& p,
                            const RegressorSpec& spec, WeightScheme scheme,
                            std::uint64_t seed) {
  detail::check_both_arms(obs.z);
  detail::check_propensities_open(p);
  const auto rows = detail::all_rows(obs.size());
  const auto treated = detail::gather_arm(obs, p, rows, 1, scheme);
  const auto control = detail::gather_arm(obs, p, rows, 0, scheme);
  const Regressor f1 =
      fit_regressor(treated.x, treated.y, treated.w, spec, derive_seed(seed, 1));
  const Regressor f0 =
      fit_regressor(control.x, control.y, control.w, spec, derive_seed(seed, 2));
  return dr_formula(obs.y_obs, obs.z, p, f1.predict(obs.covariates),
                    f0.predict(obs.covariates));
}

namespace detail {

inline constexpr int kSplitRetryLimit = 16;

inline bool half_has_both_arms(const IntVector& z, const std::vector<Index>& rows) {
  bool any0 = false, any1 = false;
  for (Index i : rows) (z[i] == 1 ? any1 : any0) = true;
  return any0 && any1;
}

// Draws a partition whose halves each contain both arms, redrawing a bounded
// number of times before giving up.
inline SplitPartition draw_split_with_arms(const IntVector& z, std::uint64_t seed) {
  Rng rng(seed);
  for (int attempt = 0; attempt < kSplitRetryLimit; ++attempt) {
    SplitPartition split = SplitPartition::draw(z.size(), rng);
    if (half_has_both_arms(z, split.s1) && half_has_both_arms(z, split.s2)) return split;
  }
  throw degenerate_error(
      "split estimator: a half lacked a treated or control row after retries");
}

}  // namespace detail

// Per-row arm predictions where every row is scored by models trained on
// the opposite half.
struct CrossFitPredictions {
  Vector f1_vals;
  Vector f0_vals;
};

// Fits arm models with scheme weights on each half and predicts for the
// opposite half. Performs no degeneracy checks: with the ridge learner an
// arm that is empty in a half yields the zero function, which keeps the
// estimator defined on every assignment during exhaustive enumeration.
inline CrossFitPredictions split_cross_fit(const ObservedDataset& obs, const Vector& p,
                                           const RegressorSpec& spec, WeightScheme scheme,
                                           const SplitPartition& split, std::uint64_t seed) {
  CrossFitPredictions cf;
  cf.f1_vals = Vector::Zero(obs.size());
  cf.f0_vals = Vector::Zero(obs.size());
  const std::vector<Index>* halves[2] = {&split.s1, &split.s2};
  for (int j = 0; j < 2; ++j) {
    const auto& train = *halves[j];
    const auto& eval = *halves[1 - j];
    if (eval.empty()) continue;
    const auto treated = detail::gather_arm(obs, p, train, 1, scheme);
    const auto control = detail::gather_arm(obs, p, train, 0, scheme);
    const Regressor f1 = fit_regressor(treated.x, treated.y, treated.w, spec,
                                       derive_seed(seed, 2 * static_cast<std::uint64_t>(j) + 1));
    const Regressor f0 = fit_regressor(control.x, control.y, control.w, spec,
                                       derive_seed(seed, 2 * static_cast<std::uint64_t>(j) + 2));
    Matrix eval_x(static_cast<Index>(eval.size()), obs.dim());
    for (std::size_t k = 0; k < eval.size(); ++k) {
      eval_x.row(static_cast<Index>(k)) = obs.covariates.row(eval[k]);
    }
    const Vector pred1 = f1.predict(eval_x);
    const Vector pred0 = f0.predict(eval_x);
    for (std::size_t k = 0; k < eval.size(); ++k) {
      cf.f1_vals[eval[k]] = pred1[static_cast<Index>(k)];
      cf.f0_vals[eval[k]] = pred0[static_cast<Index>(k)];
    }
  }
  return cf;
}

// Split estimator body with a caller-chosen partition; used by the
// exhaustive variance verification, which must hold the partition fixed.
inline double doubly_robust_split_with_partition(const ObservedDataset& obs, const Vector& p,
                                                 const RegressorSpec& spec, WeightScheme scheme,
                                                 const SplitPartition& split,
                                                 std::uint64_t seed) {
  const CrossFitPredictions cf = split_cross_fit(obs, p, spec, scheme, split, seed);
  return dr_split_formula(obs.y_obs, obs.z, p, adjustment(cf.f1_vals, cf.f0_vals, p));
}

// Split-training doubly robust estimator. Each half trains arm models with
// scheme weights on its own rows; rows of the opposite half receive the
// propensity-combined adjustment, which keeps every prediction independent
// of its own row's assignment.
inline double doubly_robust_split(const ObservedDataset& obs, const Vector& p,
                                  const RegressorSpec& spec, WeightScheme scheme,
                                  std::uint64_t seed) {
  detail::check_both_arms(obs.z);
  detail::check_propensities_open(p);
  const SplitPartition split = detail::draw_split_with_arms(obs.z, derive_seed(seed, 0));
  return doubly_robust_split_with_partition(obs, p, spec, scheme, split, seed);
}

// Split estimator with a single inverse-propensity-squared weighted model
// per half; its prediction enters the residuals at half strength, so a zero
// model reduces exactly to Horvitz-Thompson.
inline double off_policy(const ObservedDataset& obs, const Vector& p, const RegressorSpec& spec,
                         std::uint64_t seed) {
  detail::check_both_arms(obs.z);
  detail::check_propensities_open(p);
  const SplitPartition split = detail::draw_split_with_arms(obs.z, derive_seed(seed, 0));

  Vector yhat(obs.size());
  const std::vector<Index>* halves[2] = {&split.s1, &split.s2};
  for (int j = 0; j < 2; ++j) {
    const auto& train = *halves[j];
    const auto& eval = *halves[1 - j];
    Matrix x(static_cast<Index>(train.size()), obs.dim());
    Vector y(static_cast<Index>(train.size())), w(static_cast<Index>(train.size()));
    for (std::size_t k = 0; k < train.size(); ++k) {
      const Index i = train[k];
      x.row(static_cast<Index>(k)) = obs.covariates.row(i);
      y[static_cast<Index>(k)] = obs.y_obs[i];
      w[static_cast<Index>(k)] =
          obs.z[i] == 1 ? 1.0 / (p[i] * p[i]) : 1.0 / ((1.0 - p[i]) * (1.0 - p[i]));
    }
    const Regressor g =
        fit_regressor(x, y, w, spec, derive_seed(seed, static_cast<std::uint64_t>(j) + 1));
    Matrix eval_x(static_cast<Index>(eval.size()), obs.dim());
    for (std::size_t k = 0; k < eval.size(); ++k) {
      eval_x.row(static_cast<Index>(k)) = obs.covariates.row(eval[k]);
    }
    const Vector pred = g.predict(eval_x);
    for (std::size_t k = 0; k < eval.size(); ++k) yhat[eval[k]] = pred[static_cast<Index>(k)];
  }
  return dr_split_formula(obs.y_obs, obs.z, p, 0.5 * yhat);
}

// Options shared by every registry estimator.
struct EstimatorContext {
  RegressorSpec spec;
  double rd_window = 0.1;
  std::size_t strat_bins = 10;
  std::uint64_t seed = 0;
};

using EstimatorFn =
    std::function<double(const ObservedDataset&, const Vector&, const EstimatorContext&)>;

// Canonical estimator names, in report order.
inline const std::vector<std::pair<std::string, EstimatorFn>>& estimator_registry() {
  static const std::vector<std::pair<std::string, EstimatorFn>> registry = {
      {"regression-discontinuity",
       [](const ObservedDataset& obs, const Vector& p, const EstimatorContext& ctx) {
         return regression_discontinuity(obs.y_obs, obs.z, p, ctx.rd_window);
       }},
      {"propensity-stratification",
       [](const ObservedDataset& obs, const Vector& p, const EstimatorContext& ctx) {
         return propensity_stratification(obs.y_obs, obs.z, p, ctx.strat_bins);
       }},
      {"direct-difference",
       [](const ObservedDataset& obs, const Vector&, const EstimatorContext&) {
         return direct_difference(obs.y_obs, obs.z);
       }},
      {"adjusted-direct",
       [](const ObservedDataset& obs, const Vector&, const EstimatorContext& ctx) {
         return adjusted_direct(obs, ctx.spec, ctx.seed);
       }},
      {"horvitz-thompson",
       [](const ObservedDataset& obs, const Vector& p, const EstimatorContext&) {
         return horvitz_thompson(obs.y_obs, obs.z, p);
       }},
      {"off-policy",
       [](const ObservedDataset& obs, const Vector& p, const EstimatorContext& ctx) {
         return off_policy(obs, p, ctx.spec, ctx.seed);
       }},
      {"double-double",
       [](const ObservedDataset& obs, const Vector& p, const EstimatorContext& ctx) {
         return doubly_robust_split(obs, p, ctx.spec, WeightScheme::kDouble, ctx.seed);
       }},
      {"doubly-robust",
       [](const ObservedDataset& obs, const Vector& p, const EstimatorContext& ctx) {
         return doubly_robust(obs, p, ctx.spec, WeightScheme::kUnit, ctx.seed);
       }},
      {"direct-prediction",
       [](const ObservedDataset& obs, const Vector&, const EstimatorContext& ctx) {
         return direct_prediction(obs, ctx.spec, ctx.seed);
       }},
      {"dr-weighting",
       [](const ObservedDataset& obs, const Vector& p, const EstimatorContext& ctx) {
         return doubly_robust(obs, p, ctx.spec, WeightScheme::kSingle, ctx.seed);
       }},
      {"dr-2x-weighting",
       [](const ObservedDataset& obs, const Vector& p, const EstimatorContext& ctx) {
         return doubly_robust(obs, p, ctx.spec, WeightScheme::kDouble, ctx.seed);
       }},
      {"dr-split",
       [](const ObservedDataset& obs, const Vector& p, const EstimatorContext& ctx) {
         return doubly_robust_split(obs, p, ctx.spec, WeightScheme::kUnit, ctx.seed);
       }},
      {"dr-split-weight",
       [](const ObservedDataset& obs, const Vector& p, const EstimatorContext& ctx) {
         return doubly_robust_split(obs, p, ctx.spec, WeightScheme::kSingle, ctx.seed);
       }},
  };
  return registry;
}

inline const EstimatorFn& find_estimator(const std::string& name) {
  for (const auto& [key, fn] : estimator_registry()) {
    if (key == name) return fn;
  }
  throw lookup_error("unknown estimator: " + name);
}

inline std::vector<std::string> estimator_names() {
  std::vector<std::string> names;
  for (const auto& [key, fn] : estimator_registry()) names.push_back(key);
  return names;
}

// Runs one estimator and wraps the estimate with its wall time.
inline EstimatorResult run_estimator(const std::string& name, const ObservedDataset& obs,
                                     const Vector& p, const EstimatorContext& ctx) {
  const EstimatorFn& fn = find_estimator(name);
  EstimatorResult result;
  result.estimator_name = name;
  result.seed = ctx.seed;
  const auto start = std::chrono::steady_clock::now();
  result.estimate = fn(obs, p, ctx);
  const auto stop = std::chrono::steady_clock::now();
  result.elapsed_s = std::chrono::duration<double>(stop - start).count();
  if (!std::isfinite(result.estimate)) {
    throw numeric_error("estimator " + name + " produced a non-finite estimate");
  }
  return result;
}

}  // namespace natex
