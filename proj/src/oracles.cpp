#include "sgdlab/oracles.hpp"

#include <cmath>

#include <Eigen/Eigenvalues>

#include "sgdlab/errors.hpp"

namespace sgdlab {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

void RegressionProblem::validate(bool logistic) const {
  if (x.rows() == 0 || x.cols() == 0) throw InvalidInput("empty design matrix");
  if (y.size() != x.rows()) throw InvalidInput("response length does not match design rows");
  if (logistic) {
    for (Index i = 0; i < y.size(); ++i)
      if (y[i] != 0.0 && y[i] != 1.0) throw InvalidInput("logistic labels must be 0 or 1");
  } else if (!(noise_sigma > 0.0)) {
    throw InvalidInput("noise_sigma must be positive");
  }
}

ClosedForm ls_quantities(const RegressionProblem& prob, const VectorXd& theta) {
  prob.validate(false);
  if (theta.size() != prob.p()) throw InvalidInput("theta length mismatch");
  const double n = static_cast<double>(prob.n());
  const double s2 = prob.noise_sigma * prob.noise_sigma;
  const VectorXd r = prob.x * theta - prob.y;
  ClosedForm cf;
  cf.f = r.squaredNorm() / (2.0 * n * s2);
  cf.mu = prob.x.transpose() * r / (n * s2);
  cf.hf = prob.x.transpose() * prob.x / (n * s2);
  cf.m2 = prob.x.transpose() * r.cwiseAbs2().asDiagonal() * prob.x / (n * s2 * s2);
  cf.hp = cf.m2 - cf.hf;
  return cf;
}

ClosedForm logit_quantities(const RegressionProblem& prob, const VectorXd& theta) {
  prob.validate(true);
  if (theta.size() != prob.p()) throw InvalidInput("theta length mismatch");
  const double n = static_cast<double>(prob.n());
  const VectorXd z = prob.x * theta;
  VectorXd pr(z.size()), w(z.size()), e(z.size());
  double f = 0.0;
  for (Index i = 0; i < z.size(); ++i) {
    // log(1 + exp(z)) evaluated without overflow.
    const double sp = z[i] > 0 ? z[i] + std::log1p(std::exp(-z[i])) : std::log1p(std::exp(z[i]));
    pr[i] = std::exp(z[i] - sp);
    f += sp - prob.y[i] * z[i];
    w[i] = pr[i] * (1.0 - pr[i]);
    e[i] = pr[i] - prob.y[i];
  }
  ClosedForm cf;
  cf.f = f / n;
  cf.mu = prob.x.transpose() * e / n;
  cf.hf = prob.x.transpose() * w.asDiagonal() * prob.x / n;
  cf.m2 = prob.x.transpose() * e.cwiseAbs2().asDiagonal() * prob.x / n;
  cf.hp = cf.m2 - cf.hf;
  return cf;
}

NetSpec regression_net(const RegressionProblem& prob, bool logistic) {
  NetSpec spec;
  spec.input_dim = static_cast<int>(prob.p());
  spec.num_classes = 1;
  spec.biases = false;
  spec.activation = Activation::Identity;
  spec.loss = logistic ? LossKind::Logistic : LossKind::Squared;
  spec.noise_sigma = prob.noise_sigma;
  return spec;
}

Dataset regression_dataset(const RegressionProblem& prob, bool logistic) {
  prob.validate(logistic);
  Dataset ds;
  ds.features = prob.x;
  if (logistic) {
    ds.num_classes = 2;
    ds.labels.resize(static_cast<std::size_t>(prob.n()));
    for (Index i = 0; i < prob.n(); ++i) ds.labels[static_cast<std::size_t>(i)] = static_cast<int>(prob.y[i]);
  } else {
    ds.targets = prob.y;
  }
  return ds;
}

double default_fd_step(const VectorXd& theta) {
  return 1e-5 * (1.0 + (theta.size() ? theta.cwiseAbs().maxCoeff() : 0.0));
}

VectorXd fd_gradient(const ScalarFn& fn, const VectorXd& theta, double h) {
  if (h <= 0.0) h = default_fd_step(theta);
  VectorXd g(theta.size());
  VectorXd t = theta;
  for (Index j = 0; j < theta.size(); ++j) {
    t[j] = theta[j] + h;
    const double fp = fn(t);
    t[j] = theta[j] - h;
    const double fm = fn(t);
    t[j] = theta[j];
    g[j] = (fp - fm) / (2.0 * h);
  }
  return g;
}

MatrixXd fd_hessian(const ScalarFn& fn, const VectorXd& theta, double h) {
  if (h <= 0.0) h = default_fd_step(theta);
  const Index p = theta.size();
  MatrixXd hm(p, p);
  VectorXd t = theta;
  const double f0 = fn(theta);
  for (Index i = 0; i < p; ++i) {
    t[i] = theta[i] + h;
    const double fp = fn(t);
    t[i] = theta[i] - h;
    const double fm = fn(t);
    t[i] = theta[i];
    hm(i, i) = (fp - 2.0 * f0 + fm) / (h * h);
    for (Index j = 0; j < i; ++j) {
      t[i] = theta[i] + h;
      t[j] = theta[j] + h;
      const double fpp = fn(t);
      t[j] = theta[j] - h;
      const double fpm = fn(t);
      t[i] = theta[i] - h;
      const double fmm = fn(t);
      t[j] = theta[j] + h;
      const double fmp = fn(t);
      t[i] = theta[i];
      t[j] = theta[j];
      hm(i, j) = hm(j, i) = (fpp - fpm - fmp + fmm) / (4.0 * h * h);
    }
  }
  return hm;
}

MatrixXd fd_jacobian(const std::function<VectorXd(const VectorXd&)>& grad, const VectorXd& theta, double h) {
  if (h <= 0.0) h = default_fd_step(theta);
  const Index p = theta.size();
  MatrixXd jac(p, p);
  VectorXd t = theta;
  for (Index j = 0; j < p; ++j) {
    t[j] = theta[j] + h;
    const VectorXd gp = grad(t);
    t[j] = theta[j] - h;
    const VectorXd gm = grad(t);
    t[j] = theta[j];
    jac.col(j) = (gp - gm) / (2.0 * h);
  }
  return jac;
}

LsPremises ls_premises(const RegressionProblem& prob) {
  prob.validate(false);
  const double n = static_cast<double>(prob.n());
  LsPremises out;
  const MatrixXd gram = prob.x * prob.x.transpose();
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(gram, Eigen::EigenvaluesOnly);
  const double smin = std::max(0.0, es.eigenvalues().minCoeff());
  out.alpha_main = smin / n;
  out.alpha_appendix = smin / (n * n);
  out.beta = prob.x.rowwise().squaredNorm().maxCoeff();
  Eigen::SelfAdjointEigenSolver<MatrixXd> eh(prob.x.transpose() * prob.x, Eigen::EigenvaluesOnly);
  out.lipschitz = eh.eigenvalues().maxCoeff() / (n * prob.noise_sigma * prob.noise_sigma);
  return out;
}

}  // namespace sgdlab
