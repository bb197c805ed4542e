#include <catch2/catch_amalgamated.hpp>

#include "natex/learners.hpp"
#include "natex/metrics.hpp"

using namespace natex;

namespace {

// Penalized weighted squared error minimized by the ridge fit (intercept
// unpenalized, appended last).
double ridge_objective(const Matrix& x, const Vector& y, const Vector& w, double lambda,
                       const Vector& beta) {
  double total = 0.0;
  for (Index i = 0; i < x.rows(); ++i) {
    const double pred = x.row(i).dot(beta.head(x.cols())) + beta[x.cols()];
    const double r = y[i] - pred;
    total += w[i] * r * r;
  }
  for (Index j = 0; j < x.cols(); ++j) total += lambda * beta[j] * beta[j];
  return total;
}

// Brute-force coordinate grid minimization, refined until the spacing drops
// below 1e-3. Independent of the closed-form solve.
Vector grid_minimize(const Matrix& x, const Vector& y, const Vector& w, double lambda) {
  const Index k = x.cols() + 1;
  Vector center = Vector::Zero(k);
  double radius = 4.0;
  while (radius / 4.0 > 1e-3 / 2.0) {
    Vector best = center;
    double best_obj = std::numeric_limits<double>::infinity();
    std::vector<int> idx(static_cast<std::size_t>(k), 0);
    const int points = 9;
    for (;;) {
      Vector candidate(k);
      for (Index j = 0; j < k; ++j) {
        candidate[j] = center[j] + radius * (idx[static_cast<std::size_t>(j)] - 4) / 4.0;
      }
      const double obj = ridge_objective(x, y, w, lambda, candidate);
      if (obj < best_obj) {
        best_obj = obj;
        best = candidate;
      }
      Index carry = 0;
      while (carry < k) {
        if (++idx[static_cast<std::size_t>(carry)] < points) break;
        idx[static_cast<std::size_t>(carry)] = 0;
        ++carry;
      }
      if (carry == k) break;
    }
    center = best;
    radius /= 4.0;
  }
  return center;
}

}  // namespace

TEST_CASE("weight schemes evaluate the documented formulas") {
  REQUIRE(treatment_weight(WeightScheme::kUnit, 0.37) == 1.0);
  REQUIRE(control_weight(WeightScheme::kUnit, 0.37) == 1.0);

  REQUIRE(treatment_weight(WeightScheme::kSingle, 0.5) == 1.0);
  REQUIRE(control_weight(WeightScheme::kSingle, 0.5) == 1.0);
  REQUIRE(treatment_weight(WeightScheme::kDouble, 0.5) == 2.0);
  REQUIRE(control_weight(WeightScheme::kDouble, 0.5) == 2.0);

  REQUIRE_THAT(treatment_weight(WeightScheme::kDouble, 0.9),
               Catch::Matchers::WithinRel(0.1 / 0.81, 1e-12));
  REQUIRE_THAT(control_weight(WeightScheme::kDouble, 0.9),
               Catch::Matchers::WithinRel(90.0, 1e-12));
  REQUIRE_THAT(treatment_weight(WeightScheme::kSingle, 0.9),
               Catch::Matchers::WithinRel(1.0 / 9.0, 1e-12));
  REQUIRE_THAT(control_weight(WeightScheme::kSingle, 0.9),
               Catch::Matchers::WithinRel(9.0, 1e-12));

  REQUIRE(parse_weight_scheme("double") == WeightScheme::kDouble);
  REQUIRE(weight_scheme_name(WeightScheme::kSingle) == "single");
  REQUIRE_THROWS_AS(parse_weight_scheme("triple"), lookup_error);
}

TEST_CASE("unweighted unpenalized ridge on the identity design interpolates") {
  const Index n = 8;
  const Matrix x = Matrix::Identity(n, n);
  Vector y(n);
  for (Index i = 0; i < n; ++i) y[i] = static_cast<double>(i) - 3.5;
  const Regressor f = fit_ridge(x, y, Vector::Ones(n), 0.0, /*intercept=*/false);
  const Vector pred = f.predict(x);
  for (Index i = 0; i < n; ++i) REQUIRE(pred[i] == Catch::Approx(y[i]).margin(1e-10));
}

TEST_CASE("a huge penalty shrinks every non-intercept coefficient") {
  const Matrix x = generate_covariates(40, 3, 2);
  Vector y = x * Vector::Constant(3, 2.0);
  y.array() += 5.0;
  const Regressor f = fit_ridge(x, y, Vector::Ones(40), 1e9);
  const Vector& beta = f.coefficients();
  for (Index j = 0; j < 3; ++j) REQUIRE(std::abs(beta[j]) < 1e-6);
}

TEST_CASE("ridge solves the normal equations and matches a grid oracle") {
  Rng rng(42);
  const Index n = 8, d = 3;
  Matrix x(n, d);
  Vector y(n), w(n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < d; ++j) x(i, j) = rng.normal();
    y[i] = rng.normal();
    w[i] = 0.25 + rng.uniform();
  }
  const double lambda = 0.05;
  const Vector beta = ridge_coefficients(x, y, w, lambda);

  // normal-equation residual
  Matrix xt(n, d + 1);
  xt.leftCols(d) = x;
  xt.col(d).setOnes();
  Matrix a = xt.transpose() * w.asDiagonal() * xt;
  for (Index j = 0; j < d; ++j) a(j, j) += lambda;
  const Vector residual = a * beta - xt.transpose() * (w.asDiagonal() * y);
  REQUIRE(residual.cwiseAbs().maxCoeff() < 1e-9);

  // independent brute-force minimization over a refined coefficient grid
  const Vector grid = grid_minimize(x, y, w, lambda);
  REQUIRE((grid - beta).cwiseAbs().maxCoeff() < 2e-3);
  REQUIRE(ridge_objective(x, y, w, lambda, beta) <=
          ridge_objective(x, y, w, lambda, grid) + 1e-12);
}

TEST_CASE("splitting a row's weight across duplicates leaves the fit unchanged") {
  Rng rng(5);
  const Index n = 12, d = 3;
  Matrix x(n, d);
  Vector y(n), w(n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < d; ++j) x(i, j) = rng.normal();
    y[i] = rng.normal();
    w[i] = 0.5 + rng.uniform();
  }
  const Vector base = ridge_coefficients(x, y, w, 1e-6);

  Matrix x2(n + 1, d);
  Vector y2(n + 1), w2(n + 1);
  x2.topRows(n) = x;
  y2.head(n) = y;
  w2.head(n) = w;
  x2.row(n) = x.row(0);
  y2[n] = y[0];
  w2[0] = w[0] / 2.0;
  w2[n] = w[0] / 2.0;
  const Vector dup = ridge_coefficients(x2, y2, w2, 1e-6);
  REQUIRE((base - dup).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("singular unpenalized designs are rejected with advice") {
  Matrix x(4, 2);
  x << 1, 2, 2, 4, 3, 6, 4, 8;  // second column is twice the first
  Vector y(4);
  y << 1, 2, 3, 4;
  REQUIRE_THROWS_AS(fit_ridge(x, y, Vector::Ones(4), 0.0), numeric_error);
  REQUIRE_THROWS_WITH(fit_ridge(x, y, Vector::Ones(4), 0.0),
                      Catch::Matchers::ContainsSubstring("lambda"));
}

TEST_CASE("zero-weight training rows cannot influence the ridge fit") {
  Rng rng(8);
  const Index n = 10, d = 2;
  Matrix x(n, d);
  Vector y(n), w(n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < d; ++j) x(i, j) = rng.normal();
    y[i] = rng.normal();
    w[i] = i < 6 ? 1.0 : 0.0;
  }
  const Vector base = ridge_coefficients(x, y, w, 1e-6);
  Vector y_mod = y;
  y_mod.tail(4).setConstant(1e9);
  const Vector mod = ridge_coefficients(x, y_mod, w, 1e-6);
  for (Index j = 0; j <= d; ++j) REQUIRE(base[j] == mod[j]);
}

TEST_CASE("an all-zero-weight training set yields the zero function") {
  const Matrix x = generate_covariates(5, 2, 3);
  const Vector beta = ridge_coefficients(x, Vector::Ones(5), Vector::Zero(5), 1e-6);
  REQUIRE(beta.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("network fits a constant target on the training rows") {
  const Matrix x = generate_covariates(200, 5, 17);
  const Vector y = Vector::Constant(200, 0.7);
  const RegressorSpec spec = RegressorSpec::network();
  const Regressor f = fit_network(x, y, Vector::Ones(200), spec, 3);
  const Vector pred = f.predict(x);
  REQUIRE((pred.array() - 0.7).abs().maxCoeff() < 0.05);
  REQUIRE(f.final_loss() <= f.initial_loss());
}

TEST_CASE("network training is deterministic and ignores zero-weight targets") {
  const Matrix x = generate_covariates(64, 3, 9);
  Rng rng(2);
  Vector y(64), w(64);
  for (Index i = 0; i < 64; ++i) {
    y[i] = rng.normal();
    w[i] = i % 4 == 0 ? 0.0 : 1.0;
  }
  RegressorSpec spec = RegressorSpec::network();
  spec.epochs = 10;
  spec.hidden_width = 16;

  const Regressor a = fit_network(x, y, w, spec, 5);
  const Regressor b = fit_network(x, y, w, spec, 5);
  const Vector pa = a.predict(x);
  const Vector pb = b.predict(x);
  for (Index i = 0; i < 64; ++i) REQUIRE(pa[i] == pb[i]);

  Vector y_mod = y;
  for (Index i = 0; i < 64; i += 4) y_mod[i] = 1e6;
  const Regressor c = fit_network(x, y_mod, w, spec, 5);
  const Vector pc = c.predict(x);
  for (Index i = 0; i < 64; ++i) REQUIRE(pa[i] == pc[i]);
}

TEST_CASE("a zero-epoch network is the zero function") {
  const Matrix x = generate_covariates(10, 3, 1);
  RegressorSpec spec = RegressorSpec::network();
  spec.epochs = 0;
  const Regressor f = fit_network(x, Vector::Ones(10), Vector::Ones(10), spec, 4);
  const Vector pred = f.predict(x);
  for (Index i = 0; i < 10; ++i) REQUIRE(pred[i] == 0.0);
  REQUIRE(f.initial_loss() == f.final_loss());
}

TEST_CASE("network rejects empty training sets") {
  const Matrix x(0, 3);
  REQUIRE_THROWS_AS(fit_network(x, Vector(), Vector(), RegressorSpec::network(), 1),
                    degenerate_error);
}

TEST_CASE("propensity estimates are truncated at the range edges") {
  // strongly separated single covariate: the classifier saturates and the
  // truncation pins the extremes at exactly 0.01 and 0.99
  const Index n = 120;
  Matrix x(n, 1);
  IntVector z(n);
  for (Index i = 0; i < n; ++i) {
    x(i, 0) = i < n / 2 ? -2.0 - 0.01 * static_cast<double>(i) : 2.0 + 0.01 * static_cast<double>(i);
    z[i] = i < n / 2 ? 0 : 1;
  }
  RegressorSpec spec = RegressorSpec::network();
  spec.epochs = 500;
  spec.learning_rate = 0.01;
  spec.hidden_width = 16;
  const Vector p = fit_propensity(x, z, spec, 11);
  REQUIRE(p.minCoeff() == 0.01);
  REQUIRE(p.maxCoeff() == 0.99);
}

TEST_CASE("constant covariates drive estimates to the base rate") {
  const Index n = 300;
  const Matrix x = Matrix::Constant(n, 2, 1.0);
  IntVector z(n);
  for (Index i = 0; i < n; ++i) z[i] = i % 10 < 3 ? 1 : 0;  // base rate 0.3
  const Vector p = fit_propensity(x, z, RegressorSpec::network(), 7);
  for (Index i = 0; i < n; ++i) REQUIRE(std::abs(p[i] - 0.3) < 0.02);
}

TEST_CASE("single-class assignments are rejected") {
  const Matrix x = generate_covariates(10, 2, 3);
  REQUIRE_THROWS_AS(fit_propensity(x, IntVector::Ones(10), RegressorSpec::network(), 1),
                    degenerate_error);
  REQUIRE_THROWS_AS(fit_propensity(x, IntVector::Zero(10), RegressorSpec::ridge(), 1),
                    degenerate_error);
}

TEST_CASE("linear-logit propensity fit recovers a logistic model") {
  GenerationConfig cfg;
  cfg.n = 4000;
  cfg.d = 6;
  cfg.seed = 23;
  const FullDataset full = generate_dataset(cfg);
  const IntVector z = sample_treatment(full.propensity, 3);
  const Vector p = fit_propensity(full.covariates, z, RegressorSpec::ridge(), 0);
  REQUIRE(p.minCoeff() >= 0.01);
  REQUIRE(p.maxCoeff() <= 0.99);
  const double bce_true = binary_cross_entropy(full.propensity, z);
  const double bce_est = binary_cross_entropy(p, z);
  REQUIRE(std::abs(bce_true - bce_est) < 0.05);
}

TEST_CASE("regressor records spec and training fingerprint") {
  const Matrix x = generate_covariates(6, 2, 1);
  const Vector y = Vector::Ones(6);
  const Regressor f = fit_ridge(x, y, Vector::Ones(6), 1e-6);
  REQUIRE(f.spec().kind == RegressorSpec::Kind::kRidge);
  const Regressor g = fit_ridge(x, y, Vector::Ones(6), 1e-6);
  REQUIRE(f.training_fingerprint() == g.training_fingerprint());
  Vector y2 = y;
  y2[0] += 1.0;
  const Regressor h = fit_ridge(x, y2, Vector::Ones(6), 1e-6);
  REQUIRE(f.training_fingerprint() != h.training_fingerprint());
}
