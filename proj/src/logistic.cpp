// L2-regularized logistic regression, Newton's method with backtracking.

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "markerlab/common.hpp"
#include "markerlab/model.hpp"

namespace markerlab {

namespace {

constexpr int kMaxIterations = 500;
constexpr double kGradientTolerance = 1e-6;

double softplus(double s) { return s > 0.0 ? s + std::log1p(std::exp(-s)) : std::log1p(std::exp(s)); }

Eigen::MatrixXd standardized(const LinearModel& lm, const DesignMatrix& x) {
  Eigen::MatrixXd z(x.rows(), x.cols() + 1);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t c = 0; c < x.cols(); ++c) {
      z(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = (x.at(i, c) - lm.mean[c]) / lm.scale[c];
    }
    z(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(x.cols())) = 1.0;
  }
  return z;
}

struct Objective {
  const Eigen::MatrixXd& z;
  const Eigen::VectorXd& y;
  double lambda;
  Eigen::Index d;  // penalized coordinates are 0..d-1, bias is d

  double loss(const Eigen::VectorXd& theta) const {
    const Eigen::VectorXd s = z * theta;
    double total = 0.0;
    for (Eigen::Index i = 0; i < s.size(); ++i) total += softplus(s[i]) - y[i] * s[i];
    return total + 0.5 * lambda * theta.head(d).squaredNorm();
  }

  Eigen::VectorXd gradient(const Eigen::VectorXd& theta, Eigen::VectorXd* weights = nullptr) const {
    const Eigen::VectorXd s = z * theta;
    Eigen::VectorXd r(s.size());
    Eigen::VectorXd w(s.size());
    for (Eigen::Index i = 0; i < s.size(); ++i) {
      const double p = sigmoid(s[i]);
      r[i] = p - y[i];
      w[i] = p * (1.0 - p);
    }
    Eigen::VectorXd g = z.transpose() * r;
    g.head(d) += lambda * theta.head(d);
    if (weights) *weights = std::move(w);
    return g;
  }
};

LinearModel fit_scaling(const DesignMatrix& x) {
  LinearModel lm;
  const auto n = static_cast<double>(x.rows());
  lm.mean.assign(x.cols(), 0.0);
  lm.scale.assign(x.cols(), 1.0);
  for (std::size_t c = 0; c < x.cols(); ++c) {
    double mean = 0.0;
    for (std::size_t i = 0; i < x.rows(); ++i) mean += x.at(i, c);
    mean /= n;
    double var = 0.0;
    for (std::size_t i = 0; i < x.rows(); ++i) var += (x.at(i, c) - mean) * (x.at(i, c) - mean);
    const double sd = std::sqrt(var / n);
    lm.mean[c] = mean;
    lm.scale[c] = sd > 0.0 ? sd : 1.0;
  }
  lm.weights.assign(x.cols(), 0.0);
  return lm;
}

Eigen::VectorXd pack(const LinearModel& lm) {
  Eigen::VectorXd theta(static_cast<Eigen::Index>(lm.weights.size()) + 1);
  for (std::size_t c = 0; c < lm.weights.size(); ++c) theta[static_cast<Eigen::Index>(c)] = lm.weights[c];
  theta[theta.size() - 1] = lm.bias;
  return theta;
}

Eigen::VectorXd label_vector(std::span<const int> y) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(y.size()));
  for (std::size_t i = 0; i < y.size(); ++i) v[static_cast<Eigen::Index>(i)] = y[i];
  return v;
}

}  // namespace

double logistic_loss(const LinearModel& model, const DesignMatrix& x, std::span<const int> y, double lambda) {
  const auto z = standardized(model, x);
  const auto yv = label_vector(y);
  return Objective{z, yv, lambda, static_cast<Eigen::Index>(x.cols())}.loss(pack(model));
}

std::vector<double> logistic_gradient(const LinearModel& model, const DesignMatrix& x, std::span<const int> y,
                                      double lambda) {
  const auto z = standardized(model, x);
  const auto yv = label_vector(y);
  const Eigen::VectorXd g = Objective{z, yv, lambda, static_cast<Eigen::Index>(x.cols())}.gradient(pack(model));
  return {g.data(), g.data() + g.size()};
}

TrainedModel train_logistic(const DesignMatrix& x, std::span<const int> y, const HyperParams& hp) {
  hp.validate();
  check_training_input(x, y);
  LinearModel lm = fit_scaling(x);
  const auto z = standardized(lm, x);
  const auto yv = label_vector(y);
  const auto d = static_cast<Eigen::Index>(x.cols());
  const Objective obj{z, yv, hp.l2_lambda, d};

  const double rate = yv.mean();
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(d + 1);
  theta[d] = logit(rate);
  double loss = obj.loss(theta);
  Eigen::VectorXd weights;
  Eigen::VectorXd grad = obj.gradient(theta, &weights);
  int it = 0;
  for (; it < kMaxIterations && grad.lpNorm<Eigen::Infinity>() > kGradientTolerance; ++it) {
    Eigen::MatrixXd hess = z.transpose() * weights.asDiagonal() * z;
    for (Eigen::Index k = 0; k < d; ++k) hess(k, k) += hp.l2_lambda;
    hess.diagonal().array() += 1e-12;
    const Eigen::VectorXd step = -hess.ldlt().solve(grad);
    const double slope = grad.dot(step);
    double t = 1.0;
    Eigen::VectorXd candidate = theta + step;
    double next = obj.loss(candidate);
    for (int halving = 0; halving < 60 && !(next <= loss + 1e-4 * t * slope); ++halving) {
      t *= 0.5;
      candidate = theta + t * step;
      next = obj.loss(candidate);
    }
    if (!(next <= loss)) break;  // no descent possible at working precision
    theta = std::move(candidate);
    loss = next;
    grad = obj.gradient(theta, &weights);
  }

  for (Eigen::Index k = 0; k < d; ++k) lm.weights[static_cast<std::size_t>(k)] = theta[k];
  lm.bias = theta[d];
  lm.iterations = it;
  lm.gradient_norm = grad.lpNorm<Eigen::Infinity>();
  lm.converged = lm.gradient_norm <= kGradientTolerance;
  if (!lm.converged) {
    spdlog::warn("logistic regression stopped after {} iterations with gradient norm {:.3g}", it, lm.gradient_norm);
  }

  TrainedModel model;
  model.family = ModelFamily::kLogistic;
  model.base_score = logit(rate);
  model.columns = x.columns();
  model.sentinel = x.sentinel();
  model.linear = std::move(lm);
  model.meta.hyperparams = hp;
  model.meta.n_rows = x.rows();
  model.meta.data_fingerprint = matrix_fingerprint(x, y);
  model.meta.notes = {"loss=l2_logistic", "solver=newton_ldlt", "scaling=train_standardization"};
  if (!model.linear->converged) model.meta.notes.emplace_back("converged=false");
  return model;
}

}  // namespace markerlab
