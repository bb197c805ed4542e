#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <optional>
#include <thread>
#include <tuple>
#include <vector>

#include "natex/dataset.hpp"
#include "natex/errors.hpp"
#include "natex/estimators.hpp"
#include "natex/learners.hpp"
#include "natex/metrics.hpp"

namespace natex {

// Exhaustive enumeration fits two ridge models per half for every
// assignment, so the row count is capped.
inline constexpr Index kMaxEnumerationRows = 14;

// Closed-form variance decomposition of the split-training doubly robust
// estimator next to its enumerated ground truth. term1 is the
// weighted-residual component and term2 the cross-sensitivity component;
// both carry the 1/n^2 normalization, so closed_form_total = term1 + term2.
struct VarianceReport {
  double term1 = 0.0;
  double term2 = 0.0;
  double closed_form_total = 0.0;
  double enumerated_mean = 0.0;
  double enumerated_variance = 0.0;
  std::optional<double> mc_mean;
  std::optional<double> mc_variance;
  std::optional<double> mc_stderr;

  // Provenance of the instance the report was computed on.
  std::size_t n = 0;
  std::size_t d = 0;
  WeightScheme scheme = WeightScheme::kUnit;
  double lambda = 0.0;
};

// A pair of fitted functions treated as assignment-independent predictions.
struct FixedFunctionPair {
  Regressor f1;
  Regressor f0;
};

namespace detail {

inline void check_enumeration_size(Index n) {
  if (n > kMaxEnumerationRows) {
    throw cost_error("enumeration over 2^n assignments is capped at n = " +
                     std::to_string(kMaxEnumerationRows) + ", got n = " + std::to_string(n));
  }
  if (n < 1) throw validation_error("enumeration: need at least one row");
}

inline IntVector assignment_bits(std::uint64_t mask, Index n) {
  IntVector z(n);
  for (Index i = 0; i < n; ++i) z[i] = static_cast<int>((mask >> i) & 1u);
  return z;
}

inline double assignment_probability(std::uint64_t mask, const Vector& p) {
  double prob = 1.0;
  for (Index i = 0; i < p.size(); ++i) {
    prob *= ((mask >> i) & 1u) ? p[i] : 1.0 - p[i];
  }
  return prob;
}

// Adjustment values at `eval` rows from ridge arm models trained on `train`
// rows under the given observation. Base and flipped variants in the
// cross-sensitivity term both go through this one routine.
inline void half_adjustment(const ObservedDataset& obs, const Vector& p, WeightScheme scheme,
                            double lambda, const std::vector<Index>& train,
                            const std::vector<Index>& eval, Vector& yhat) {
  const auto treated = gather_arm(obs, p, train, 1, scheme);
  const auto control = gather_arm(obs, p, train, 0, scheme);
  const Vector b1 = ridge_coefficients(treated.x, treated.y, treated.w, lambda);
  const Vector b0 = ridge_coefficients(control.x, control.y, control.w, lambda);
  const Index d = obs.dim();
  for (Index i : eval) {
    const double f1 = obs.covariates.row(i).dot(b1.head(d)) + b1[d];
    const double f0 = obs.covariates.row(i).dot(b0.head(d)) + b0[d];
    yhat[i] = (1.0 - p[i]) * f1 + p[i] * f0;
  }
}

struct EnumerationChunkResult {
  KahanSum weighted_dev;       // sum prob * (tau_hat - tau)
  KahanSum weighted_dev_sq;    // sum prob * (tau_hat - tau)^2
  KahanSum weighted_term1;     // sum prob * sum_i (residual combination)^2
  KahanSum weighted_term2;     // sum prob * sum_{i != j} D_ij D_ji
  KahanSum probability;        // sum prob, for sanity
};

struct EnumerationTotals {
  double mean = 0.0;
  double variance = 0.0;
  double term1 = 0.0;
  double term2 = 0.0;
  double probability = 0.0;
};

// Walks every assignment in [begin, end), evaluating the split estimator
// with the fixed partition. When with_terms is set, also accumulates the
// two closed-form variance summands, which requires refitting each half
// with single rows flipped between arms.
inline EnumerationChunkResult enumerate_range(const FullDataset& full,
                                              const SplitPartition& split, WeightScheme scheme,
                                              double lambda, std::uint64_t begin,
                                              std::uint64_t end, bool with_terms) {
  const Index n = full.size();
  const Vector& p = full.propensity;
  const RegressorSpec ridge_spec = RegressorSpec::ridge(lambda);

  Vector sq1(n), sq0(n);
  for (Index i = 0; i < n; ++i) {
    sq1[i] = std::sqrt((1.0 - p[i]) / p[i]);
    sq0[i] = std::sqrt(p[i] / (1.0 - p[i]));
  }

  const std::vector<Index>* halves[2] = {&split.s1, &split.s2};
  EnumerationChunkResult acc;
  Vector base_yhat(n), flip_yhat(n);
  Matrix delta(n, n);

  for (std::uint64_t mask = begin; mask < end; ++mask) {
    const IntVector z = assignment_bits(mask, n);
    const double prob = assignment_probability(mask, p);
    const ObservedDataset obs = observe(full, z);

    // Estimator path: same cross-fit the public estimator evaluates.
    const CrossFitPredictions cf = split_cross_fit(obs, p, ridge_spec, scheme, split, 0);
    const double tau_hat =
        dr_split_formula(obs.y_obs, obs.z, p, adjustment(cf.f1_vals, cf.f0_vals, p));
    const double dev = tau_hat - full.true_ate;
    acc.weighted_dev.add(prob * dev);
    acc.weighted_dev_sq.add(prob * dev * dev);
    acc.probability.add(prob);

    if (!with_terms) continue;

    // Weighted-residual term: residuals against both potential outcomes.
    KahanSum term1_z;
    for (Index i = 0; i < n; ++i) {
      const double r1 = full.y1[i] - cf.f1_vals[i];
      const double r0 = full.y0[i] - cf.f0_vals[i];
      const double s = r1 * sq1[i] + r0 * sq0[i];
      term1_z.add(s * s);
    }
    acc.weighted_term1.add(prob * term1_z.value());

    // Cross-sensitivity term. delta(s, r) = yhat_s(z with z_r = 1) minus
    // yhat_s(z with z_r = 0); it vanishes when s and r share a half because
    // s's models never train on r.
    for (int h = 0; h < 2; ++h) {
      const auto& train = *halves[h];
      const auto& eval = *halves[1 - h];
      half_adjustment(obs, p, scheme, lambda, train, eval, base_yhat);
      for (Index r : train) {
        IntVector zf = z;
        zf[r] = 1 - zf[r];
        const ObservedDataset obs_f = observe(full, zf);
        half_adjustment(obs_f, p, scheme, lambda, train, eval, flip_yhat);
        for (Index s : eval) {
          delta(s, r) = z[r] == 1 ? base_yhat[s] - flip_yhat[s] : flip_yhat[s] - base_yhat[s];
        }
      }
    }
    KahanSum term2_z;
    for (Index i : split.s1) {
      for (Index j : split.s2) {
        term2_z.add(delta(i, j) * delta(j, i));
      }
    }
    acc.weighted_term2.add(prob * 2.0 * term2_z.value());
  }
  return acc;
}

inline EnumerationTotals enumerate_all(const FullDataset& full, const SplitPartition& split,
                                       WeightScheme scheme, double lambda, bool with_terms,
                                       std::size_t threads) {
  check_enumeration_size(full.size());
  const std::uint64_t total = 1ull << full.size();

  // Fixed contiguous chunks reduced in index order: results are identical
  // for any thread count.
  const std::uint64_t chunk_count = std::min<std::uint64_t>(total, 64);
  const std::uint64_t chunk_size = (total + chunk_count - 1) / chunk_count;
  std::vector<EnumerationChunkResult> chunks(chunk_count);

  const std::size_t workers =
      std::max<std::size_t>(1, std::min<std::size_t>(threads, chunk_count));
  if (workers <= 1) {
    for (std::uint64_t c = 0; c < chunk_count; ++c) {
      const std::uint64_t begin = c * chunk_size;
      const std::uint64_t end = std::min(total, begin + chunk_size);
      chunks[c] = enumerate_range(full, split, scheme, lambda, begin, end, with_terms);
    }
  } else {
    std::atomic<std::uint64_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t wkr = 0; wkr < workers; ++wkr) {
      pool.emplace_back([&]() {
        for (;;) {
          const std::uint64_t c = next.fetch_add(1);
          if (c >= chunk_count) return;
          const std::uint64_t begin = c * chunk_size;
          const std::uint64_t end = std::min(total, begin + chunk_size);
          chunks[c] = enumerate_range(full, split, scheme, lambda, begin, end, with_terms);
        }
      });
    }
    for (auto& t : pool) t.join();
  }

  KahanSum dev, dev_sq, term1, term2, prob;
  for (const auto& c : chunks) {
    dev.add(c.weighted_dev.value());
    dev_sq.add(c.weighted_dev_sq.value());
    term1.add(c.weighted_term1.value());
    term2.add(c.weighted_term2.value());
    prob.add(c.probability.value());
  }

  const auto n2 = static_cast<double>(full.size()) * static_cast<double>(full.size());
  EnumerationTotals totals;
  totals.mean = dev.value();
  totals.variance = dev_sq.value() - totals.mean * totals.mean;
  totals.term1 = term1.value() / n2;
  totals.term2 = term2.value() / n2;
  totals.probability = prob.value();
  return totals;
}

}  // namespace detail

// Exact mean and variance of tau_hat(z) - tau over every assignment,
// weighted by the Bernoulli product measure, with the given fixed split and
// the closed-form ridge learner.
inline std::pair<double, double> enumerate_moments(const FullDataset& full,
                                                   const SplitPartition& split,
                                                   WeightScheme scheme, double lambda,
                                                   std::size_t threads = 0) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  const auto totals = detail::enumerate_all(full, split, scheme, lambda,
                                            /*with_terms=*/false, threads);
  return {totals.mean, totals.variance};
}

// Computes the two closed-form variance summands by the same exhaustive
// enumeration (with per-row arm-flip refits for the cross term) and places
// them next to the enumerated ground-truth moments.
inline VarianceReport verify_variance(const FullDataset& full, const SplitPartition& split,
                                      WeightScheme scheme, double lambda,
                                      std::size_t threads = 0) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  const auto totals =
      detail::enumerate_all(full, split, scheme, lambda, /*with_terms=*/true, threads);
  VarianceReport report;
  report.term1 = totals.term1;
  report.term2 = totals.term2;
  report.closed_form_total = totals.term1 + totals.term2;
  report.enumerated_mean = totals.mean;
  report.enumerated_variance = totals.variance;
  report.n = static_cast<std::size_t>(full.size());
  report.d = static_cast<std::size_t>(full.dim());
  report.scheme = scheme;
  report.lambda = lambda;
  return report;
}

struct McMoments {
  double mean = 0.0;
  double variance = 0.0;  // sample variance
  double stderr_mean = 0.0;
};

// Monte-Carlo moments of tau_hat - tau for any registry estimator: fresh
// assignment (and fresh internal split) per run, true propensities.
inline McMoments mc_moments(const FullDataset& full, const std::string& estimator_name,
                            std::size_t runs, std::uint64_t seed,
                            EstimatorContext ctx = {RegressorSpec::ridge()}) {
  if (runs < 2) throw validation_error("mc_moments: need at least two runs");
  const EstimatorFn& fn = find_estimator(estimator_name);

  double mean = 0.0, m2 = 0.0;
  for (std::size_t r = 0; r < runs; ++r) {
    const IntVector z = sample_treatment(full.propensity, derive_seed(seed, 2 * r));
    const ObservedDataset obs = observe(full, z);
    ctx.seed = derive_seed(seed, 2 * r + 1);
    const double dev = fn(obs, full.propensity, ctx) - full.true_ate;
    const double delta = dev - mean;
    mean += delta / static_cast<double>(r + 1);
    m2 += delta * (dev - mean);
  }
  McMoments out;
  out.mean = mean;
  out.variance = m2 / static_cast<double>(runs - 1);
  out.stderr_mean = std::sqrt(out.variance / static_cast<double>(runs));
  return out;
}

struct AmGmCheck {
  double bound = 0.0;
  double term1 = 0.0;
  bool holds = false;
};

// With assignment-independent predictions the weighted-residual term is an
// exact sum, and the totaled double-weighted expected losses bound it by
// (a+b)^2 <= 2a^2 + 2b^2. Both sides are reported on the raw-sum scale
// (no 1/n^2), which makes the a = b equality case exact.
inline AmGmCheck amgm_bound_check(const FullDataset& full, const FixedFunctionPair& fixed) {
  const Vector f1 = fixed.f1.predict(full.covariates);
  const Vector f0 = fixed.f0.predict(full.covariates);
  KahanSum term1, bound;
  for (Index i = 0; i < full.size(); ++i) {
    const double p = full.propensity[i];
    const double r1 = full.y1[i] - f1[i];
    const double r0 = full.y0[i] - f0[i];
    const double a = r1 * std::sqrt((1.0 - p) / p);
    const double b = r0 * std::sqrt(p / (1.0 - p));
    term1.add((a + b) * (a + b));
    bound.add(2.0 * ((1.0 - p) / p) * r1 * r1 + 2.0 * (p / (1.0 - p)) * r0 * r0);
  }
  AmGmCheck check;
  check.term1 = term1.value();
  check.bound = bound.value();
  check.holds = check.term1 <= check.bound + 1e-12;
  return check;
}

// The expected double-weighted treatment loss collapses to the single-weight
// sum: E_z[sum_i 1[z_i=1] (1-p)/p^2 r1_i^2] = sum_i (1-p)/p r1_i^2.
// Returns both sides, the left evaluated through the expectation.
inline std::pair<double, double> double_weight_expectation_identity(
    const FullDataset& full, const FixedFunctionPair& fixed) {
  const Vector f1 = fixed.f1.predict(full.covariates);
  KahanSum lhs, rhs;
  for (Index i = 0; i < full.size(); ++i) {
    const double p = full.propensity[i];
    const double r1 = full.y1[i] - f1[i];
    lhs.add(p * ((1.0 - p) / (p * p)) * r1 * r1);
    rhs.add(((1.0 - p) / p) * r1 * r1);
  }
  return {lhs.value(), rhs.value()};
}

struct McVarianceTerms {
  double term1 = 0.0;
  double term2 = 0.0;
  std::size_t sampled_pairs = 0;
};

// Monte-Carlo estimate of the two variance summands at sizes where
// enumeration is infeasible. Assignments are sampled from the Bernoulli
// measure; the cross term averages exact per-pair arm-flip refits over a
// sampled subset of cross-half pairs, capped by pair_budget.
inline McVarianceTerms mc_variance_terms(const FullDataset& full, const SplitPartition& split,
                                         WeightScheme scheme, double lambda,
                                         std::size_t assignments, std::size_t pair_budget,
                                         std::uint64_t seed) {
  if (assignments < 1) throw validation_error("mc_variance_terms: need at least one assignment");
  const Index n = full.size();
  const Vector& p = full.propensity;
  const RegressorSpec ridge_spec = RegressorSpec::ridge(lambda);
  const std::vector<Index>* halves[2] = {&split.s1, &split.s2};

  Vector sq1(n), sq0(n);
  for (Index i = 0; i < n; ++i) {
    sq1[i] = std::sqrt((1.0 - p[i]) / p[i]);
    sq0[i] = std::sqrt(p[i] / (1.0 - p[i]));
  }

  const std::size_t pairs_per_assignment =
      std::max<std::size_t>(1, pair_budget / assignments);
  const double total_ordered_pairs =
      2.0 * static_cast<double>(split.s1.size()) * static_cast<double>(split.s2.size());

  Rng rng(seed);
  KahanSum term1_acc, product_acc;
  std::size_t sampled = 0;
  Vector base_yhat(n), flip_yhat(n);

  for (std::size_t a = 0; a < assignments; ++a) {
    const IntVector z = sample_treatment(p, rng.next_u64());
    const ObservedDataset obs = observe(full, z);
    const CrossFitPredictions cf = split_cross_fit(obs, p, ridge_spec, scheme, split, 0);

    KahanSum term1_z;
    for (Index i = 0; i < n; ++i) {
      const double r1 = full.y1[i] - cf.f1_vals[i];
      const double r0 = full.y0[i] - cf.f0_vals[i];
      const double s = r1 * sq1[i] + r0 * sq0[i];
      term1_z.add(s * s);
    }
    term1_acc.add(term1_z.value());

    for (int h = 0; h < 2; ++h) {
      detail::half_adjustment(obs, p, scheme, lambda, *halves[h], *halves[1 - h],
                              h == 0 ? base_yhat : flip_yhat);
    }
    const Vector yhat_from_s1 = base_yhat;  // values at s2 rows
    const Vector yhat_from_s2 = flip_yhat;  // values at s1 rows

    auto delta_for = [&](Index flipped_row, Index at_row) {
      IntVector zf = z;
      zf[flipped_row] = 1 - zf[flipped_row];
      const ObservedDataset obs_f = observe(full, zf);
      // flipped_row's half trains the models that predict at at_row
      const int h = std::find(split.s1.begin(), split.s1.end(), flipped_row) != split.s1.end()
                        ? 0
                        : 1;
      detail::half_adjustment(obs_f, p, scheme, lambda, *halves[h], *halves[1 - h], flip_yhat);
      const double base = h == 0 ? yhat_from_s1[at_row] : yhat_from_s2[at_row];
      return z[flipped_row] == 1 ? base - flip_yhat[at_row] : flip_yhat[at_row] - base;
    };

    for (std::size_t q = 0; q < pairs_per_assignment; ++q) {
      const Index i = split.s1[static_cast<std::size_t>(rng.below(split.s1.size()))];
      const Index j = split.s2[static_cast<std::size_t>(rng.below(split.s2.size()))];
      const double d_ij = delta_for(j, i);
      const double d_ji = delta_for(i, j);
      product_acc.add(d_ij * d_ji);
      ++sampled;
    }
  }

  const auto n2 = static_cast<double>(n) * static_cast<double>(n);
  McVarianceTerms out;
  out.term1 = term1_acc.value() / static_cast<double>(assignments) / n2;
  out.term2 = product_acc.value() / static_cast<double>(sampled) * total_ordered_pairs / n2;
  out.sampled_pairs = sampled;
  return out;
}

}  // namespace natex
