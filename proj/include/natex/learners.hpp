#pragma once

#include <Eigen/Dense>
#include <bit>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "natex/dataset.hpp"
#include "natex/errors.hpp"
#include "natex/rng.hpp"

namespace natex {

// Regression-loss weightings for the doubly robust family. Per row,
// the treatment/control training weights evaluate to
//   Unit:   (1, 1)
//   Single: ((1-p)/p,   p/(1-p))
//   Double: ((1-p)/p^2, p/(1-p)^2)
enum class WeightScheme { kUnit, kSingle, kDouble };

inline double treatment_weight(WeightScheme scheme, double p) {
  switch (scheme) {
    case WeightScheme::kUnit: return 1.0;
    case WeightScheme::kSingle: return (1.0 - p) / p;
    case WeightScheme::kDouble: return (1.0 - p) / (p * p);
  }
  throw domain_error("unknown weight scheme");
}

inline double control_weight(WeightScheme scheme, double p) {
  switch (scheme) {
    case WeightScheme::kUnit: return 1.0;
    case WeightScheme::kSingle: return p / (1.0 - p);
    case WeightScheme::kDouble: return p / ((1.0 - p) * (1.0 - p));
  }
  throw domain_error("unknown weight scheme");
}

inline std::string weight_scheme_name(WeightScheme scheme) {
  switch (scheme) {
    case WeightScheme::kUnit: return "unit";
    case WeightScheme::kSingle: return "single";
    case WeightScheme::kDouble: return "double";
  }
  return "?";
}

inline WeightScheme parse_weight_scheme(const std::string& name) {
  if (name == "unit") return WeightScheme::kUnit;
  if (name == "single") return WeightScheme::kSingle;
  if (name == "double") return WeightScheme::kDouble;
  throw lookup_error("unknown weight scheme: " + name + " (expected unit|single|double)");
}

struct RegressorSpec {
  enum class Kind { kRidge, kNetwork };

  Kind kind = Kind::kNetwork;
  double ridge_lambda = 1e-6;
  std::size_t hidden_width = 100;
  std::size_t n_layers = 3;       // affine layers; ReLU between them
  double learning_rate = 1e-3;
  std::size_t epochs = 200;
  std::size_t batch_size = 128;
  std::uint64_t seed = 0;

  static RegressorSpec ridge(double lambda = 1e-6) {
    RegressorSpec spec;
    spec.kind = Kind::kRidge;
    spec.ridge_lambda = lambda;
    return spec;
  }

  static RegressorSpec network() { return RegressorSpec{}; }

  void validate() const {
    if (ridge_lambda < 0) throw validation_error("regressor spec: ridge_lambda must be >= 0");
    if (n_layers < 1) throw validation_error("regressor spec: n_layers must be >= 1");
    if (n_layers > 1 && hidden_width < 1) {
      throw validation_error("regressor spec: hidden_width must be >= 1");
    }
    if (!(learning_rate > 0)) {
      throw validation_error("regressor spec: learning_rate must be > 0");
    }
    if (batch_size < 1) throw validation_error("regressor spec: batch_size must be >= 1");
  }
};

inline std::string regressor_kind_name(RegressorSpec::Kind kind) {
  return kind == RegressorSpec::Kind::kRidge ? "ridge" : "network";
}

inline RegressorSpec::Kind parse_regressor_kind(const std::string& name) {
  if (name == "ridge") return RegressorSpec::Kind::kRidge;
  if (name == "network") return RegressorSpec::Kind::kNetwork;
  throw lookup_error("unknown learner kind: " + name + " (expected ridge|network)");
}

namespace detail {

inline void hash_mix(std::uint64_t& h, std::uint64_t v) { h = mix64(h ^ mix64(v)); }

inline void hash_mix(std::uint64_t& h, double v) {
  hash_mix(h, std::bit_cast<std::uint64_t>(v));
}

inline std::uint64_t fingerprint_training_data(const Matrix& x, const Vector& y,
                                               const Vector& w) {
  std::uint64_t h = 0x6e61746578ull;
  hash_mix(h, static_cast<std::uint64_t>(x.rows()));
  hash_mix(h, static_cast<std::uint64_t>(x.cols()));
  for (Index i = 0; i < x.rows(); ++i) {
    for (Index j = 0; j < x.cols(); ++j) hash_mix(h, x(i, j));
  }
  for (Index i = 0; i < y.size(); ++i) hash_mix(h, y[i]);
  for (Index i = 0; i < w.size(); ++i) hash_mix(h, w[i]);
  return h;
}

struct RidgeModel {
  Vector beta;     // coefficient per covariate; intercept appended last if used
  bool intercept = true;
};

// Network parameters and arithmetic are single precision, the usual choice
// for this kind of model; estimates assembled from predictions stay double.
using MatrixF = Eigen::MatrixXf;
using VectorF = Eigen::VectorXf;

struct NetworkModel {
  std::vector<MatrixF> weights;  // layer l maps width[l] -> width[l+1]
  std::vector<VectorF> biases;
  bool logistic_head = false;

  VectorF forward_float(const MatrixF& x) const {
    MatrixF a = x;
    for (std::size_t l = 0; l < weights.size(); ++l) {
      MatrixF zl = (a * weights[l]).rowwise() + biases[l].transpose();
      if (l + 1 < weights.size()) {
        a = zl.cwiseMax(0.0f);
      } else {
        a = std::move(zl);
      }
    }
    VectorF out = a.col(0);
    if (logistic_head) {
      for (Index i = 0; i < out.size(); ++i) {
        out[i] = 1.0f / (1.0f + std::exp(-out[i]));
      }
    }
    return out;
  }

  Vector forward(const Matrix& x) const {
    return forward_float(x.cast<float>()).cast<double>();
  }
};

}  // namespace detail

// Immutable fitted function from a covariate row to a real prediction.
// Copies are cheap handles to shared fitted state.
class Regressor {
 public:
  double predict_one(const Eigen::RowVectorXd& x) const {
    Matrix m(1, x.size());
    m.row(0) = x;
    return predict(m)[0];
  }

  Vector predict(const Matrix& x) const {
    if (const auto* ridge = std::get_if<detail::RidgeModel>(&impl_->model)) {
      if (ridge->beta.size() == 0) return Vector::Zero(x.rows());
      if (ridge->intercept) {
        return (x * ridge->beta.head(x.cols())).array() + ridge->beta[ridge->beta.size() - 1];
      }
      return x * ridge->beta;
    }
    return std::get<detail::NetworkModel>(impl_->model).forward(x);
  }

  const RegressorSpec& spec() const { return impl_->spec; }
  std::uint64_t training_fingerprint() const { return impl_->fingerprint; }

  // Training objective sum(w_i * loss_i) before the first step and after the
  // last one; identical for zero-epoch fits.
  double initial_loss() const { return impl_->initial_loss; }
  double final_loss() const { return impl_->final_loss; }

  // Coefficients for ridge models (covariates first, intercept last if used).
  const Vector& coefficients() const {
    const auto* ridge = std::get_if<detail::RidgeModel>(&impl_->model);
    if (!ridge) throw lookup_error("coefficients() requires a ridge model");
    return ridge->beta;
  }

 private:
  struct Impl {
    std::variant<detail::RidgeModel, detail::NetworkModel> model;
    RegressorSpec spec;
    std::uint64_t fingerprint = 0;
    double initial_loss = 0.0;
    double final_loss = 0.0;
  };

  explicit Regressor(std::shared_ptr<const Impl> impl) : impl_(std::move(impl)) {}

  std::shared_ptr<const Impl> impl_;

  friend Regressor make_ridge_regressor(detail::RidgeModel, RegressorSpec, std::uint64_t);
  friend Regressor make_network_regressor(detail::NetworkModel, RegressorSpec, std::uint64_t,
                                          double, double);
};

inline Regressor make_ridge_regressor(detail::RidgeModel model, RegressorSpec spec,
                                      std::uint64_t fingerprint) {
  auto impl = std::make_shared<Regressor::Impl>();
  impl->model = std::move(model);
  impl->spec = spec;
  impl->fingerprint = fingerprint;
  return Regressor(std::move(impl));
}

inline Regressor make_network_regressor(detail::NetworkModel model, RegressorSpec spec,
                                        std::uint64_t fingerprint, double initial_loss,
                                        double final_loss) {
  auto impl = std::make_shared<Regressor::Impl>();
  impl->model = std::move(model);
  impl->spec = spec;
  impl->fingerprint = fingerprint;
  impl->initial_loss = initial_loss;
  impl->final_loss = final_loss;
  return Regressor(std::move(impl));
}

// Closed-form weighted ridge coefficients: solves
//   (X'WX + lambda I) beta = X'W y
// with an appended constant-1 column when intercept is set; the intercept is
// never penalized. A training set with no positive weight yields the zero
// function, which keeps exhaustive enumeration well defined on assignments
// that empty one arm.
inline Vector ridge_coefficients(const Matrix& x, const Vector& y, const Vector& w,
                                 double lambda, bool intercept = true) {
  if (y.size() != x.rows() || w.size() != x.rows()) {
    throw validation_error("ridge: covariate, outcome, and weight lengths must agree");
  }
  if (lambda < 0) throw validation_error("ridge: lambda must be >= 0");
  for (Index i = 0; i < w.size(); ++i) {
    if (w[i] < 0) throw validation_error("ridge: weights must be nonnegative");
  }

  const Index k = x.cols() + (intercept ? 1 : 0);
  bool any_weight = false;
  for (Index i = 0; i < w.size(); ++i) any_weight |= (w[i] > 0);
  if (!any_weight) return Vector::Zero(k);

  Matrix a = Matrix::Zero(k, k);
  Vector rhs = Vector::Zero(k);
  Vector xi(k);
  for (Index i = 0; i < x.rows(); ++i) {
    if (w[i] == 0) continue;
    xi.head(x.cols()) = x.row(i);
    if (intercept) xi[k - 1] = 1.0;
    a.noalias() += w[i] * (xi * xi.transpose());
    rhs.noalias() += (w[i] * y[i]) * xi;
  }
  for (Index j = 0; j < x.cols(); ++j) a(j, j) += lambda;  // intercept unpenalized

  Eigen::FullPivLU<Matrix> lu(a);
  if (!lu.isInvertible()) {
    throw numeric_error(
        "ridge: normal equations are singular (rank-deficient design); use lambda > 0");
  }
  return lu.solve(rhs);
}

inline Regressor fit_ridge(const Matrix& x, const Vector& y, const Vector& w, double lambda,
                           bool intercept = true) {
  detail::RidgeModel model;
  model.beta = ridge_coefficients(x, y, w, lambda, intercept);
  model.intercept = intercept;
  RegressorSpec spec = RegressorSpec::ridge(lambda);
  return make_ridge_regressor(std::move(model), spec,
                              detail::fingerprint_training_data(x, y, w));
}

namespace detail {

// Hidden layers get uniform fan-in initialization; the output layer starts
// at zero so an untrained network is the zero function (and a zero-epoch
// classifier starts at probability 1/2).
inline NetworkModel init_network(Index input_dim, const RegressorSpec& spec, Rng& rng,
                                 bool logistic_head) {
  NetworkModel model;
  model.logistic_head = logistic_head;
  std::vector<Index> widths;
  widths.push_back(input_dim);
  for (std::size_t l = 0; l + 1 < spec.n_layers; ++l) {
    widths.push_back(static_cast<Index>(spec.hidden_width));
  }
  widths.push_back(1);
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    MatrixF w(widths[l], widths[l + 1]);
    VectorF b(widths[l + 1]);
    const bool last = (l + 2 == widths.size());
    if (last) {
      w.setZero();
      b.setZero();
    } else {
      const double bound = 1.0 / std::sqrt(static_cast<double>(widths[l]));
      for (Index i = 0; i < w.rows(); ++i) {
        for (Index j = 0; j < w.cols(); ++j) {
          w(i, j) = static_cast<float>((2.0 * rng.uniform() - 1.0) * bound);
        }
      }
      for (Index j = 0; j < b.size(); ++j) {
        b[j] = static_cast<float>((2.0 * rng.uniform() - 1.0) * bound);
      }
    }
    model.weights.push_back(std::move(w));
    model.biases.push_back(std::move(b));
  }
  return model;
}

struct AdamState {
  std::vector<MatrixF> mw, vw;
  std::vector<VectorF> mb, vb;
  std::size_t step = 0;

  explicit AdamState(const NetworkModel& model) {
    for (const auto& w : model.weights) {
      mw.push_back(MatrixF::Zero(w.rows(), w.cols()));
      vw.push_back(MatrixF::Zero(w.rows(), w.cols()));
    }
    for (const auto& b : model.biases) {
      mb.push_back(VectorF::Zero(b.size()));
      vb.push_back(VectorF::Zero(b.size()));
    }
  }

  void update(NetworkModel& model, const std::vector<MatrixF>& gw,
              const std::vector<VectorF>& gb, double lr) {
    constexpr float kBeta1 = 0.9f;
    constexpr float kBeta2 = 0.999f;
    constexpr float kEps = 1e-8f;
    ++step;
    const float c1 = 1.0f - std::pow(kBeta1, static_cast<float>(step));
    const float c2 = 1.0f - std::pow(kBeta2, static_cast<float>(step));
    const auto lrf = static_cast<float>(lr);
    for (std::size_t l = 0; l < model.weights.size(); ++l) {
      mw[l] = kBeta1 * mw[l] + (1.0f - kBeta1) * gw[l];
      vw[l] = kBeta2 * vw[l] + (1.0f - kBeta2) * gw[l].cwiseProduct(gw[l]);
      model.weights[l].array() -=
          lrf * (mw[l].array() / c1) / ((vw[l].array() / c2).sqrt() + kEps);
      mb[l] = kBeta1 * mb[l] + (1.0f - kBeta1) * gb[l];
      vb[l] = kBeta2 * vb[l] + (1.0f - kBeta2) * gb[l].cwiseProduct(gb[l]);
      model.biases[l].array() -=
          lrf * (mb[l].array() / c1) / ((vb[l].array() / c2).sqrt() + kEps);
    }
  }
};

// Weighted objective over a row subset, accumulated in double:
//   regression: sum_i w_i (y_i - f(x_i))^2
//   logistic:   sum_i w_i BCE(sigmoid(f(x_i)), y_i)   evaluated from logits
inline double network_objective(const NetworkModel& model, const MatrixF& x, const VectorF& y,
                                const VectorF& w, bool logistic_head) {
  MatrixF a = x;
  for (std::size_t l = 0; l < model.weights.size(); ++l) {
    MatrixF zl = (a * model.weights[l]).rowwise() + model.biases[l].transpose();
    if (l + 1 < model.weights.size()) {
      a = zl.cwiseMax(0.0f);
    } else {
      a = std::move(zl);
    }
  }
  double total = 0.0;
  for (Index i = 0; i < y.size(); ++i) {
    if (w[i] == 0.0f) continue;
    const double f = a(i, 0);
    if (logistic_head) {
      // log(1 + exp(-|f|)) + max(0, f) - y * f  is the stable BCE from logits
      total += w[i] * (std::log1p(std::exp(-std::abs(f))) + std::max(f, 0.0) - y[i] * f);
    } else {
      const double r = static_cast<double>(y[i]) - f;
      total += w[i] * r * r;
    }
  }
  return total;
}

struct TrainOptions {
  bool logistic_head = false;
  // Holdout early stopping (classifier path): keep the parameters from the
  // epoch with the best holdout objective instead of the last one.
  double holdout_fraction = 0.0;
  double* initial_loss = nullptr;
  double* final_loss = nullptr;
};

// Seeded mini-batch Adam training shared by the regression and logistic
// heads. Batch composition depends only on (n, seed), never on targets, so
// rows with zero weight cannot influence the fitted parameters.
inline NetworkModel train_network(const Matrix& x, const Vector& y, const Vector& w,
                                  const RegressorSpec& spec, std::uint64_t seed,
                                  const TrainOptions& options) {
  if (x.rows() == 0) throw degenerate_error("network: empty training set");
  if (y.size() != x.rows() || w.size() != x.rows()) {
    throw validation_error("network: covariate, target, and weight lengths must agree");
  }
  spec.validate();

  Rng rng(seed);
  NetworkModel model = init_network(x.cols(), spec, rng, options.logistic_head);
  AdamState adam(model);

  const MatrixF xf = x.cast<float>();
  const VectorF yf = y.cast<float>();
  const VectorF wf = w.cast<float>();

  const auto n = static_cast<std::size_t>(x.rows());
  std::vector<Index> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<Index>(i);

  // Holdout rows are removed from the training pool up front; their
  // objective decides which epoch's parameters are kept.
  std::size_t train_n = n;
  MatrixF holdout_x;
  VectorF holdout_y, holdout_w;
  if (options.holdout_fraction > 0.0 && n >= 10) {
    rng.shuffle(order);
    const auto holdout_n = std::max<std::size_t>(
        1, static_cast<std::size_t>(static_cast<double>(n) * options.holdout_fraction));
    train_n = n - holdout_n;
    holdout_x.resize(static_cast<Index>(holdout_n), x.cols());
    holdout_y.resize(static_cast<Index>(holdout_n));
    holdout_w.resize(static_cast<Index>(holdout_n));
    for (std::size_t i = 0; i < holdout_n; ++i) {
      const Index row = order[train_n + i];
      holdout_x.row(static_cast<Index>(i)) = xf.row(row);
      holdout_y[static_cast<Index>(i)] = yf[row];
      holdout_w[static_cast<Index>(i)] = wf[row];
    }
    order.resize(train_n);
  }

  if (options.initial_loss) {
    *options.initial_loss = network_objective(model, xf, yf, wf, options.logistic_head);
  }

  const bool use_holdout = holdout_x.rows() > 0;
  NetworkModel best = model;
  double best_objective = use_holdout ? network_objective(model, holdout_x, holdout_y,
                                                          holdout_w, options.logistic_head)
                                      : 0.0;

  const std::size_t layers = model.weights.size();
  std::vector<MatrixF> gw(layers);
  std::vector<VectorF> gb(layers);
  std::vector<MatrixF> acts(layers);  // acts[l] is the input to layer l
  std::vector<MatrixF> pre(layers);

  for (std::size_t epoch = 0; epoch < spec.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < train_n; start += spec.batch_size) {
      const std::size_t bsz = std::min(spec.batch_size, train_n - start);

      MatrixF xb(static_cast<Index>(bsz), x.cols());
      VectorF yb(static_cast<Index>(bsz)), wb(static_cast<Index>(bsz));
      for (std::size_t i = 0; i < bsz; ++i) {
        const Index row = order[start + i];
        xb.row(static_cast<Index>(i)) = xf.row(row);
        yb[static_cast<Index>(i)] = yf[row];
        wb[static_cast<Index>(i)] = wf[row];
      }

      acts[0] = std::move(xb);
      for (std::size_t l = 0; l < layers; ++l) {
        pre[l].noalias() = acts[l] * model.weights[l];
        pre[l].rowwise() += model.biases[l].transpose();
        if (l + 1 < layers) acts[l + 1] = pre[l].cwiseMax(0.0f);
      }

      // Gradient of the mean weighted loss with respect to the output.
      MatrixF grad(static_cast<Index>(bsz), 1);
      const float inv_b = 1.0f / static_cast<float>(bsz);
      for (Index i = 0; i < static_cast<Index>(bsz); ++i) {
        const float f = pre[layers - 1](i, 0);
        if (options.logistic_head) {
          grad(i, 0) = wb[i] * (1.0f / (1.0f + std::exp(-f)) - yb[i]) * inv_b;
        } else {
          grad(i, 0) = wb[i] * 2.0f * (f - yb[i]) * inv_b;
        }
      }

      for (std::size_t l = layers; l-- > 0;) {
        gw[l].noalias() = acts[l].transpose() * grad;
        gb[l] = grad.colwise().sum();
        if (l > 0) {
          MatrixF back = grad * model.weights[l].transpose();
          grad = back.cwiseProduct((pre[l - 1].array() > 0.0f).cast<float>().matrix());
        }
      }

      adam.update(model, gw, gb, spec.learning_rate);
    }

    if (use_holdout) {
      const double objective =
          network_objective(model, holdout_x, holdout_y, holdout_w, options.logistic_head);
      if (objective < best_objective) {
        best_objective = objective;
        best = model;
      }
    }
  }
  if (use_holdout) model = best;

  if (options.final_loss) {
    *options.final_loss = network_objective(model, xf, yf, wf, options.logistic_head);
  }
  return model;
}

}  // namespace detail

// Minimizes sum_i w_i (y_i - f(x_i))^2 by seeded mini-batch training.
inline Regressor fit_network(const Matrix& x, const Vector& y, const Vector& w,
                             const RegressorSpec& spec, std::uint64_t seed) {
  double initial = 0.0, final_ = 0.0;
  detail::TrainOptions options;
  options.initial_loss = &initial;
  options.final_loss = &final_;
  auto model = detail::train_network(x, y, w, spec, seed, options);
  return make_network_regressor(std::move(model), spec,
                                detail::fingerprint_training_data(x, y, w), initial, final_);
}

// Fits either learner kind under a weighted squared loss.
inline Regressor fit_regressor(const Matrix& x, const Vector& y, const Vector& w,
                               const RegressorSpec& spec, std::uint64_t seed) {
  if (spec.kind == RegressorSpec::Kind::kRidge) {
    return fit_ridge(x, y, w, spec.ridge_lambda);
  }
  return fit_network(x, y, w, spec, seed);
}

// Trains a binary classifier on the treatment assignment and returns the
// per-row estimated propensities, truncated to [0.01, 0.99]. The network
// kind uses a logistic output head on the shared architecture; the ridge
// kind fits a logistic-linear model by Newton iterations, which keeps
// ridge-mode benchmark runs deterministic and fast.
inline Vector fit_propensity(const Matrix& x, const IntVector& z, const RegressorSpec& spec,
                             std::uint64_t seed) {
  if (z.size() == 0) throw degenerate_error("propensity fit: empty training set");
  if (z.size() != x.rows()) {
    throw validation_error("propensity fit: covariate and assignment lengths must agree");
  }
  bool any0 = false, any1 = false;
  for (Index i = 0; i < z.size(); ++i) {
    if (z[i] == 0) {
      any0 = true;
    } else if (z[i] == 1) {
      any1 = true;
    } else {
      throw validation_error("propensity fit: assignment entries must be 0 or 1");
    }
  }
  if (!any0 || !any1) {
    throw degenerate_error("propensity fit: assignment contains a single class");
  }

  if (spec.kind == RegressorSpec::Kind::kNetwork) {
    Vector y(z.size()), w = Vector::Ones(z.size());
    for (Index i = 0; i < z.size(); ++i) y[i] = static_cast<double>(z[i]);
    // A fixed epoch count overfits the assignment labels and skews the
    // in-sample cross entropy; a seeded holdout picks the epoch instead.
    detail::TrainOptions options;
    options.logistic_head = true;
    options.holdout_fraction = 0.2;
    auto model = detail::train_network(x, y, w, spec, seed, options);
    Vector p = model.forward(x);
    for (Index i = 0; i < p.size(); ++i) p[i] = clamp_propensity(p[i]);
    return p;
  }

  // Newton / iteratively reweighted least squares for the linear logit.
  const Index k = x.cols() + 1;
  const double lambda = std::max(spec.ridge_lambda, 1e-10);
  Vector beta = Vector::Zero(k);
  Matrix xt(x.rows(), k);
  xt.leftCols(x.cols()) = x;
  xt.col(k - 1).setOnes();
  for (int iter = 0; iter < 50; ++iter) {
    Vector eta = xt * beta;
    Vector mu(eta.size()), wt(eta.size());
    for (Index i = 0; i < eta.size(); ++i) {
      mu[i] = logistic(std::clamp(eta[i], -30.0, 30.0));
      wt[i] = std::max(mu[i] * (1.0 - mu[i]), 1e-10);
    }
    Vector zf(z.size());
    for (Index i = 0; i < z.size(); ++i) zf[i] = static_cast<double>(z[i]);
    Vector grad = xt.transpose() * (zf - mu);
    Matrix hess = xt.transpose() * wt.asDiagonal() * xt;
    for (Index j = 0; j < x.cols(); ++j) {
      grad[j] -= lambda * beta[j];
      hess(j, j) += lambda;
    }
    Vector delta = hess.ldlt().solve(grad);
    beta += delta;
    if (delta.cwiseAbs().maxCoeff() < 1e-10) break;
  }
  Vector p(x.rows());
  Vector eta = xt * beta;
  for (Index i = 0; i < p.size(); ++i) p[i] = clamp_propensity(logistic(eta[i]));
  return p;
}

}  // namespace natex
